import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from globalpointer import _pykernels, kernels
from globalpointer.sdp import _SparseOps

compiled = kernels.compiled_module()
needs_compiled = pytest.mark.skipif(compiled is None, reason="extension not built")


def random_ops(seed, n=7, k=5):
    rng = np.random.default_rng(seed)
    A = np.zeros((k, n, n))
    for a in range(k):
        M = rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.4)
        A[a] = M + M.T
    A[0, 0, 0] = 1.0  # no empty constraint
    return A, _SparseOps(A)


def sym(rng, n):
    M = rng.standard_normal((n, n))
    return M @ M.T + np.eye(n)


def test_fallback_matches_dense_definitions():
    A, ops = random_ops(0)
    rng = np.random.default_rng(1)
    X, W, y = sym(rng, 7), sym(rng, 7), rng.standard_normal(5)
    args = (ops.ptr, ops.rows, ops.cols, ops.vals)
    np.testing.assert_allclose(_pykernels.apply_op(*args, X), np.einsum("kij,ij->k", A, X), atol=1e-12)
    np.testing.assert_allclose(_pykernels.adjoint(*args, y, 7), np.einsum("k,kij->ij", y, A), atol=1e-12)
    dense = np.array([[np.trace(A[a] @ X @ A[b] @ W) for b in range(5)] for a in range(5)])
    np.testing.assert_allclose(_pykernels.schur(*args, X, W), dense, rtol=1e-12, atol=1e-10)


@needs_compiled
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 12), st.integers(1, 8))
def test_compiled_matches_fallback(seed, n, k):
    _, ops = random_ops(seed, n, k)
    rng = np.random.default_rng(seed + 1)
    X, W, y = sym(rng, n), sym(rng, n), rng.standard_normal(k)
    args = (ops.ptr, ops.rows, ops.cols, ops.vals)
    np.testing.assert_allclose(compiled.apply_op(*args, X), _pykernels.apply_op(*args, X), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(compiled.adjoint(*args, y, n), _pykernels.adjoint(*args, y, n), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(compiled.schur(*args, X, W), _pykernels.schur(*args, X, W), rtol=1e-11, atol=1e-10)


@needs_compiled
def test_compiled_is_default_backend():
    assert kernels.BACKEND == "cython"


def test_env_var_forces_fallback():
    code = "from globalpointer import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, GLOBALPOINTER_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_solver_agrees_across_backends():
    code = (
        "import numpy as np\n"
        "from globalpointer.relax import build_plane_sdp\n"
        "from globalpointer.scene import SceneSpec, generate_scene\n"
        "from globalpointer.sdp import solve_sdp\n"
        "s = generate_scene(SceneSpec(4, 5, seed=2))\n"
        "p = build_plane_sdp(0, s.poses, s.graph)\n"
        "print(repr(solve_sdp(p).primal_objective))\n"
    )
    runs = []
    for flag in ("0", "1"):
        env = dict(os.environ, GLOBALPOINTER_PURE_PYTHON=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
        assert out.returncode == 0, out.stderr
        runs.append(float(out.stdout))
    assert runs[0] == pytest.approx(runs[1], rel=1e-8, abs=1e-9)
