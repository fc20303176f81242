"""Monte Carlo experiment runner and scaling benchmark.

Every draw of a trial comes from ``SeedSequence([seed, cell, trial])``, so any
single row of a sweep can be reproduced in isolation.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .gp import GpConfig, SolverError, run_globalpointer
from .gpp import GppConfig, run_globalpointer_pp
from .metrics import compute_metrics, gauge_align
from .scene import SceneSpec, generate_scene, perturb_init, random_init
from .sdp import SdpSettings

__all__ = [
    "CSV_COLUMNS",
    "METHODS",
    "RunConfig",
    "Cell",
    "trial_seeds",
    "run_trial",
    "run_experiment",
    "summarize",
    "rows_to_csv",
    "BenchResult",
    "run_benchmark",
    "loglog_slope",
]

log = logging.getLogger(__name__)

METHODS = ("globalpointer", "globalpointer-pp")
INITS = ("random", "perturbed", "ground_truth")

CSV_COLUMNS = [
    "method", "m", "n", "sigma_p", "sigma_init", "overlap", "trial", "seed",
    "iterations", "converged", "e_total", "e_R_med", "e_t_med", "e_n_med", "e_d_med",
    "wall_ms", "gap_max", "rank_ratio_max", "status",
]


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


@dataclass
class RunConfig:
    """A sweep: the Cartesian product of the grids, ``trials`` runs per cell.

    ``sigma_init`` is the rotation perturbation in radians for
    ``init="perturbed"``; the translation perturbation is
    ``sigma_t_per_rad * sigma_init`` meters. It is ignored for other inits.
    """
    method: str = "globalpointer"
    m: list = field(default_factory=lambda: [10])
    n: list = field(default_factory=lambda: [10])
    sigma_p: list = field(default_factory=lambda: [0.0])
    sigma_init: list = field(default_factory=lambda: [0.0])
    overlap: list = field(default_factory=lambda: [1.0])
    trials: int = 1
    seed: int = 0
    init: str = "random"
    sigma_t_per_rad: float = 10.0
    points_per_obs: int = 100
    box_half_extent: float = 25.0
    max_iter: int = 200
    rel_tol: float = 1e-4
    rel_gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    record_timing: bool = True
    workers: int = 1
    out_csv: str | None = None
    out_json: str | None = None

    def __post_init__(self):
        for name in ("m", "n", "sigma_p", "sigma_init", "overlap"):
            setattr(self, name, _as_list(getattr(self, name)))
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.init not in INITS:
            raise ValueError(f"unknown init {self.init!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    def cells(self) -> list:
        grid = itertools.product(self.m, self.n, self.sigma_p, self.sigma_init, self.overlap)
        return [Cell(k, *vals) for k, vals in enumerate(grid)]

    def solver_settings(self) -> SdpSettings:
        return SdpSettings(self.rel_gap_tol, self.feas_tol)


@dataclass(frozen=True)
class Cell:
    index: int
    m: int
    n: int
    sigma_p: float
    sigma_init: float
    overlap: float


def trial_seeds(seed: int, cell: int, trial: int):
    """Scene seed (64-bit int) and an independent generator for the initialization."""
    ss = np.random.SeedSequence([seed, cell, trial])
    scene_ss, init_ss = ss.spawn(2)
    return int(scene_ss.generate_state(1, np.uint64)[0]), np.random.default_rng(init_ss)


def _solve(config: RunConfig, scene, rng, sigma_init: float):
    settings = config.solver_settings()
    if config.method == "globalpointer-pp":
        return run_globalpointer_pp(scene.graph, GppConfig(config.max_iter, config.rel_tol,
                                                           sdp_settings=settings))
    if config.init == "random":
        poses, planes = random_init(scene.spec, rng)
    elif config.init == "perturbed":
        poses = perturb_init(scene.poses, sigma_init, config.sigma_t_per_rad * sigma_init, rng)
        planes = list(scene.planes)
    else:
        poses, planes = list(scene.poses), list(scene.planes)
    return run_globalpointer(scene.graph, poses, planes,
                             GpConfig(config.max_iter, config.rel_tol, settings, record_trace=True))


def run_trial(config: RunConfig, cell: Cell, trial: int) -> dict:
    """One row of the results table; failures become rows with a status."""
    scene_seed, rng = trial_seeds(config.seed, cell.index, trial)
    row = {"method": config.method, "m": cell.m, "n": cell.n, "sigma_p": cell.sigma_p,
           "sigma_init": cell.sigma_init, "overlap": cell.overlap, "trial": trial, "seed": scene_seed}
    nan = float("nan")
    row.update(iterations=0, converged=False, e_total=nan, e_R_med=nan, e_t_med=nan, e_n_med=nan,
               e_d_med=nan, wall_ms=nan, gap_max=nan, rank_ratio_max=nan, status="ok")
    try:
        spec = SceneSpec(cell.m, cell.n, config.box_half_extent, config.points_per_obs,
                         cell.sigma_p, cell.overlap, scene_seed)
        scene = generate_scene(spec)
        t0 = time.perf_counter()
        report = _solve(config, scene, rng, cell.sigma_init)
        wall = (time.perf_counter() - t0) * 1e3
    except SolverError as exc:
        row["status"] = f"error: {exc}"
        rep = exc.report
        row["iterations"] = rep.iterations
        return row
    except Exception as exc:  # a failed trial must not abort the sweep
        row["status"] = f"error: {exc}"
        return row
    poses, planes = gauge_align(report.poses, report.planes, scene.poses)
    met = compute_metrics(poses, planes, scene.poses, scene.planes, scene.graph)
    row.update(iterations=report.iterations, converged=bool(report.converged), e_total=met.e_total,
               e_R_med=met.median("e_R"), e_t_med=met.median("e_t"), e_n_med=met.median("e_n"),
               e_d_med=met.median("e_d"), wall_ms=wall if config.record_timing else nan,
               gap_max=report.gap_max, rank_ratio_max=report.rank_ratio_max)
    row["_e_R_max"] = met.aggregates["e_R"]["max"]
    row["_e_t_max"] = met.aggregates["e_t"]["max"]
    row["_point_count"] = scene.graph.point_count()
    return row


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return repr(v)
    return str(v)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def _median(vals) -> float:
    vals = [v for v in vals if not (isinstance(v, float) and math.isnan(v))]
    return float(np.median(vals)) if vals else float("nan")


def summarize(config: RunConfig, rows) -> list:
    """Per-cell aggregates of the CSV rows."""
    out = []
    for cell in config.cells():
        rs = [r for r in rows if (r["m"], r["n"], r["sigma_p"], r["sigma_init"], r["overlap"])
              == (cell.m, cell.n, cell.sigma_p, cell.sigma_init, cell.overlap)]
        out.append({
            "cell": cell.index, "method": config.method, "m": cell.m, "n": cell.n,
            "sigma_p": cell.sigma_p, "sigma_init": cell.sigma_init, "overlap": cell.overlap,
            "trials": len(rs),
            "converged": sum(1 for r in rs if r["converged"]),
            "errors": sum(1 for r in rs if r["status"] != "ok"),
            "iterations_median": _median([float(r["iterations"]) for r in rs]),
            "e_total_median": _median([r["e_total"] for r in rs]),
            "e_R_med_median": _median([r["e_R_med"] for r in rs]),
            "e_t_med_median": _median([r["e_t_med"] for r in rs]),
            "wall_ms_median": _median([r["wall_ms"] for r in rs]),
        })
    return out


def _json_safe(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


def _run_job(args):
    config, cell, trial = args
    return run_trial(config, cell, trial)


def run_experiment(config: RunConfig):
    """Run every (cell, trial), write the CSV / JSON outputs, return ``(rows, summary)``.

    Rows come back sorted by cell then trial regardless of ``workers``.
    """
    jobs = [(config, cell, t) for cell in config.cells() for t in range(config.trials)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            rows = list(pool.map(_run_job, jobs))
    else:
        rows = [_run_job(j) for j in jobs]
    summary = summarize(config, rows)
    if config.out_csv:
        with open(config.out_csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(rows_to_csv(rows))
    if config.out_json:
        with open(config.out_json, "w", encoding="utf-8") as fh:
            json.dump(_json_safe({"config": config.to_dict(), "cells": summary}), fh, indent=2)
            fh.write("\n")
    return rows, summary


# -- scaling benchmark ----------------------------------------------------------


def loglog_slope(sizes, times) -> float:
    """Least-squares slope of ``log(time)`` against ``log(size)``."""
    x = np.log(np.asarray(sizes, dtype=float))
    y = np.log(np.asarray(times, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class BenchResult:
    method: str
    sizes: list
    fixed: int
    vary_m: list
    vary_n: list
    slope_m: float
    slope_n: float

    def to_dict(self) -> dict:
        return asdict(self)


def _bench_cell(method, m, n, trials, seed, cell, sigma_init):
    times = []
    for t in range(trials):
        scene_seed, rng = trial_seeds(seed, cell, t)
        scene = generate_scene(SceneSpec(m, n, seed=scene_seed))
        poses = perturb_init(scene.poses, sigma_init, 10.0 * sigma_init, rng)
        t0 = time.perf_counter()
        if method == "globalpointer":
            run_globalpointer(scene.graph, poses, list(scene.planes))
        else:
            run_globalpointer_pp(scene.graph)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def run_benchmark(method: str = "globalpointer", sizes=(5, 10, 20, 40), fixed: int = 10,
                  trials: int = 3, seed: int = 0, sigma_init: float = 0.05) -> BenchResult:
    """Median wall time over ``sizes`` for m (n fixed) and for n (m fixed).

    Runs start from lightly perturbed ground truth so that the timing
    reflects per-iteration cost rather than the distance travelled.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    sizes = list(sizes)
    vary_m = [_bench_cell(method, s, fixed, trials, seed, k, sigma_init) for k, s in enumerate(sizes)]
    vary_n = [_bench_cell(method, fixed, s, trials, seed, len(sizes) + k, sigma_init)
              for k, s in enumerate(sizes)]
    return BenchResult(method, sizes, fixed, vary_m, vary_n,
                       loglog_slope(sizes, vary_m), loglog_slope(sizes, vary_n))
