"""Command-line entry point: simulate, solve, evaluate, sweep, bench.

Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from types import SimpleNamespace

import numpy as np

from .dataset import Dataset, DatasetError, dataset_from_scene, read_dataset, write_dataset
from .experiment import METHODS, RunConfig, run_benchmark, run_experiment
from .geometry import GeometryError, Plane, Pose
from .gp import GpConfig, SolverError, run_globalpointer
from .gpp import GppConfig, run_globalpointer_pp
from .metrics import compute_metrics, gauge_align
from .scene import SceneError, SceneSpec, generate_scene, perturb_init, random_init
from .sdp import SdpSettings

__all__ = ["main", "UsageError"]

log = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="globalpointer", description="Multi-frame plane adjustment.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("--m", type=int, default=10)
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--sigma-p", type=float, default=0.0)
    s.add_argument("--overlap", type=float, default=1.0)
    s.add_argument("--points-per-obs", type=int, default=100)
    s.add_argument("--box", type=float, default=25.0, help="box half extent in meters")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-ground-truth", action="store_true")
    s.add_argument("--out", required=True)

    s = sub.add_parser("solve", help="solve a dataset")
    s.add_argument("dataset")
    s.add_argument("--method", choices=METHODS, default="globalpointer")
    s.add_argument("--config", help="JSON file with solver options")
    s.add_argument("--init", choices=("random", "perturbed", "ground_truth"), default="random")
    s.add_argument("--sigma-r", type=float, default=0.1, help="rotation perturbation (rad)")
    s.add_argument("--sigma-t", type=float, default=1.0, help="translation perturbation (m)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="estimates JSON (default: stdout)")

    s = sub.add_parser("evaluate", help="score estimates against ground truth")
    s.add_argument("estimates")
    s.add_argument("dataset")
    s.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")
    s.add_argument("--out", help="metrics JSON (default: stdout)")

    s = sub.add_parser("sweep", help="run an experiment grid from a JSON config")
    s.add_argument("config")
    s.add_argument("--seed", type=int)
    s.add_argument("--csv")
    s.add_argument("--json")

    s = sub.add_parser("bench", help="wall-time scaling over m and n")
    s.add_argument("--method", choices=METHODS, default="globalpointer")
    s.add_argument("--sizes", default="5,10,20,40")
    s.add_argument("--fixed", type=int, default=10)
    s.add_argument("--trials", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="result JSON (default: stdout)")
    return p


def _emit(obj, path):
    text = json.dumps(obj, indent=2) + "\n"
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _pose_rows(poses):
    return [np.concatenate([p.rotation.reshape(-1), p.translation]).tolist() for p in poses]


def _cmd_simulate(a):
    spec = SceneSpec(a.m, a.n, a.box, a.points_per_obs, a.sigma_p, a.overlap, a.seed)
    scene = generate_scene(spec)
    write_dataset(a.out, dataset_from_scene(scene, ground_truth=not a.no_ground_truth))
    return 0


def _solver_options(path) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        opts = json.load(fh)
    if not isinstance(opts, dict):
        raise UsageError("solver config must be a JSON object")
    return opts


def _split_settings(opts: dict):
    sdp = {k: opts.pop(k) for k in ("rel_gap_tol", "feas_tol") if k in opts}
    if "sdp_max_iter" in opts:
        sdp["max_iter"] = opts.pop("sdp_max_iter")
    return SdpSettings(**sdp)


def _cmd_solve(a):
    data = read_dataset(a.dataset)
    opts = _solver_options(a.config)
    try:
        settings = _split_settings(opts)
        if a.method == "globalpointer-pp":
            report = run_globalpointer_pp(data.graph, GppConfig(sdp_settings=settings, **opts))
        else:
            rng = np.random.default_rng(a.seed)
            if a.init == "random":
                shape = SimpleNamespace(m=data.m, n=data.n, box_half_extent=data.box_half_extent)
                poses, planes = random_init(shape, rng)
            else:
                if not data.has_ground_truth:
                    raise UsageError(f"--init {a.init} needs ground truth in the dataset")
                poses = list(data.poses) if a.init == "ground_truth" else \
                    perturb_init(data.poses, a.sigma_r, a.sigma_t, rng)
                planes = list(data.planes)
            report = run_globalpointer(data.graph, poses, planes, GpConfig(sdp_settings=settings, **opts))
    except TypeError as exc:
        raise UsageError(f"bad solver option: {exc}") from exc
    out = {
        "method": report.method,
        "m": data.m,
        "n": data.n,
        "poses": _pose_rows(report.poses),
        "planes": [pl.vector().tolist() for pl in report.planes],
        "report": {
            "converged": report.converged,
            "iterations": report.iterations,
            "objective_trace": report.objective_trace,
            "plane_to_plane_trace": report.p2p_trace,
            "gap_max": report.gap_max,
            "rank_ratio_max": report.rank_ratio_max,
            "failures": [list(f) for f in report.failures],
            "wall_time": report.wall_time,
            "stop_metric": report.stop_metric,
        },
    }
    _emit(out, a.out)
    return 0


def _load_estimates(path):
    with open(path, encoding="utf-8") as fh:
        est = json.load(fh)
    try:
        poses = [Pose(np.reshape(r[:9], (3, 3)), r[9:12]) for r in est["poses"]]
        planes = [Plane(r[:3], r[3]) for r in est["planes"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed estimates file ({exc})") from exc
    return est, poses, planes


def _cmd_evaluate(a):
    est, poses, planes = _load_estimates(a.estimates)
    data: Dataset = read_dataset(a.dataset)
    if not data.has_ground_truth:
        raise DatasetError("dataset has no ground truth")
    if len(poses) != data.m or len(planes) != data.n:
        raise DatasetError(f"estimates have m={len(poses)}, n={len(planes)} "
                           f"but the dataset has m={data.m}, n={data.n}")
    poses, planes = gauge_align(poses, planes, data.poses)
    met = compute_metrics(poses, planes, data.poses, data.planes, data.graph)
    _emit(met.to_dict(), a.out)
    return 0


def _cmd_sweep(a):
    try:
        config = RunConfig.from_json(a.config)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad sweep config: {exc}") from exc
    if a.seed is not None:
        config.seed = a.seed
    if a.csv:
        config.out_csv = a.csv
    if a.json:
        config.out_json = a.json
    rows, summary = run_experiment(config)
    if not config.out_json:
        _emit({"cells": summary}, None)
    return 0


def _cmd_bench(a):
    try:
        sizes = [int(s) for s in a.sizes.split(",") if s]
    except ValueError as exc:
        raise UsageError(f"bad --sizes: {exc}") from exc
    res = run_benchmark(a.method, sizes, a.fixed, a.trials, a.seed)
    _emit(res.to_dict(), a.out)
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "solve": _cmd_solve,
    "evaluate": _cmd_evaluate,
    "sweep": _cmd_sweep,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if not exc.code else 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"globalpointer {args.command}: {exc}", file=sys.stderr)
        return 1
    except (DatasetError, GeometryError, SceneError, SolverError, ValueError, OSError) as exc:
        print(f"globalpointer {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
