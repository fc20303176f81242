"""Compare the compiled kernels with the numpy fallback.

Times each kernel on the constraint operators of the pose and plane
sub-problems, then a full GlobalPointer solve under each backend (the
backend is picked at import, so the solve runs in a subprocess).

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from globalpointer import _pykernels, kernels
from globalpointer.relax import build_plane_sdp, build_pose_sdp
from globalpointer.scene import SceneSpec, generate_scene
from globalpointer.sdp import _SparseOps

SOLVE = (
    "import time\n"
    "from globalpointer.gp import run_globalpointer\n"
    "from globalpointer.scene import SceneSpec, generate_scene, random_init\n"
    "import numpy as np\n"
    "spec = SceneSpec(10, 10, seed=0)\n"
    "s = generate_scene(spec)\n"
    "poses, planes = random_init(spec, np.random.default_rng(1))\n"
    "t = time.perf_counter()\n"
    "run_globalpointer(s.graph, poses, planes)\n"
    "print(time.perf_counter() - t)\n"
)


def kernel_times(ops, impl, repeat):
    rng = np.random.default_rng(0)
    M = rng.standard_normal((ops.n, ops.n))
    X = M @ M.T + np.eye(ops.n)
    W = np.linalg.inv(X)
    y = rng.standard_normal(len(ops.ptr) - 1)
    args = (ops.ptr, ops.rows, ops.cols, ops.vals)
    calls = {
        "apply_op": lambda: impl.apply_op(*args, X),
        "adjoint": lambda: impl.adjoint(*args, y, ops.n),
        "schur": lambda: impl.schur(*args, X, W),
    }
    return {name: min(timeit.repeat(f, number=200, repeat=repeat)) / 200 for name, f in calls.items()}


def solve_time(pure: bool) -> float:
    env = dict(os.environ, GLOBALPOINTER_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", SOLVE], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    compiled = kernels.compiled_module()
    if compiled is None:
        print("compiled extension not built; nothing to compare")
        return 1
    scene = generate_scene(SceneSpec(10, 10, seed=0))
    problems = {
        "pose": build_pose_sdp(0, scene.planes, scene.graph),
        "plane": build_plane_sdp(0, scene.poses, scene.graph),
    }
    print(f"{'problem':<8}{'kernel':<10}{'cython us':>12}{'python us':>12}{'speedup':>10}")
    for label, problem in problems.items():
        ops = _SparseOps(problem.A)
        fast = kernel_times(ops, compiled, args.repeat)
        slow = kernel_times(ops, _pykernels, args.repeat)
        for name in fast:
            print(f"{label:<8}{name:<10}{fast[name] * 1e6:>12.2f}{slow[name] * 1e6:>12.2f}"
                  f"{slow[name] / fast[name]:>10.1f}")
    fast = min(solve_time(False) for _ in range(3))
    slow = min(solve_time(True) for _ in range(3))
    print(f"\nGlobalPointer m=n=10: cython {fast:.3f} s, python {slow:.3f} s, speedup {slow / fast:.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
