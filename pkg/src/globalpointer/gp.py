"""Alternating pose-only / plane-only SDP solver.

Each outer iteration solves one small SDP per pose (planes fixed) and then one
per plane (poses fixed), rounding every solution back to a pose or a plane.
Both sub-problems are solved globally, so the point-to-plane objective cannot
go up; a per-entity guard keeps the previous estimate whenever rounding or
solver tolerance would make it go up anyway.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import GeometryError, ObservationGraph, plane_objective, pose_objective, total_objective
from .relax import normalized_plane_problem, normalized_pose_problem, recover_plane, recover_pose, refine_pose
from .sdp import DependentConstraintsWarning, SdpError, SdpSettings, solve_sdp

__all__ = [
    "GpConfig",
    "SolveReport",
    "SubproblemError",
    "SubproblemRecord",
    "SolverError",
    "pose_step",
    "plane_step",
    "run_globalpointer",
    "EPS_FLOOR",
]

log = logging.getLogger(__name__)

EPS_FLOOR = 1e-12
# tolerance for the per-entity descent guard (absolute, in objective units)
GUARD_SLACK = 0.0


class SubproblemError(RuntimeError):
    """A pose or plane sub-problem could not be solved."""

    def __init__(self, kind: str, index: int, reason: str):
        super().__init__(f"{kind} {index}: {reason}")
        self.kind = kind
        self.index = index
        self.reason = reason


class SolverError(RuntimeError):
    """Raised by the outer loops; ``report`` holds everything computed so far."""

    def __init__(self, message: str, report: "SolveReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class GpConfig:
    max_iter: int = 200
    rel_tol: float = 1e-4
    sdp_settings: SdpSettings = field(default_factory=SdpSettings)
    record_trace: bool = True

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")


@dataclass(frozen=True)
class SubproblemRecord:
    """Summary of one sub-problem solve."""
    kind: str
    index: int
    iteration: int
    status: str
    rel_gap: float
    rank_ratio: float
    accepted: bool


@dataclass
class SolveReport:
    poses: list
    planes: list
    objective_trace: list = field(default_factory=list)
    certificates: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    wall_time: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    method: str = "globalpointer"
    stop_metric: str = "objective"
    # GlobalPointer++ also records the plane-to-plane objective it minimizes
    p2p_trace: list = field(default_factory=list)

    @property
    def gap_max(self) -> float:
        gaps = [c.rel_gap for c in self.certificates if np.isfinite(c.rel_gap)]
        return max(gaps) if gaps else float("nan")

    @property
    def rank_ratio_max(self) -> float:
        ratios = [c.rank_ratio for c in self.certificates if np.isfinite(c.rank_ratio)]
        return max(ratios) if ratios else float("nan")

    @property
    def final_objective(self) -> float:
        return self.objective_trace[-1] if self.objective_trace else float("nan")


def _check_pose(i: int, planes, graph: ObservationGraph):
    js = graph.planes_of(i)
    if len(js) < 3 or np.linalg.matrix_rank(np.array([planes[j].normal for j in js]), tol=1e-6) < 3:
        raise SubproblemError("pose", i, f"underdetermined pose {i}")


def _solve_pose(i, planes, graph, settings):
    _check_pose(i, planes, graph)
    try:
        problem, unmap = normalized_pose_problem(i, planes, graph)
        with warnings.catch_warnings():
            # the orthogonality constraints always carry one known dependency
            warnings.simplefilter("ignore", DependentConstraintsWarning)
            sol = solve_sdp(problem, settings)
        if not sol.optimal:
            raise SubproblemError("pose", i, f"solver status {sol.status.value}")
        pose_hat, ratio = recover_pose(sol)
        pose_hat = refine_pose(pose_hat, problem.cost)
    except (SdpError, GeometryError, np.linalg.LinAlgError) as exc:
        raise SubproblemError("pose", i, str(exc)) from exc
    return unmap(pose_hat), sol, ratio


def _solve_plane(j, poses, graph, settings):
    if not graph.poses_of(j):
        raise SubproblemError("plane", j, f"unobserved plane {j}")
    try:
        problem, unmap = normalized_plane_problem(j, poses, graph)
        sol = solve_sdp(problem, settings)
        if not sol.optimal:
            raise SubproblemError("plane", j, f"solver status {sol.status.value}")
        plane_hat, ratio = recover_plane(sol)
    except (SdpError, GeometryError, np.linalg.LinAlgError) as exc:
        raise SubproblemError("plane", j, str(exc)) from exc
    return unmap(plane_hat), sol, ratio


def _pose_phase(planes, graph, config, previous, iteration, records, failures):
    out = []
    for i in range(graph.m):
        try:
            pose, sol, ratio = _solve_pose(i, planes, graph, config.sdp_settings)
        except SubproblemError as exc:
            if previous is None:
                raise
            failures.append((iteration, "pose", i, exc.reason))
            out.append(previous[i])
            continue
        accepted = True
        if previous is not None:
            new = pose_objective(i, pose, planes, graph)
            old = pose_objective(i, previous[i], planes, graph)
            if new > old + GUARD_SLACK:
                pose, accepted = previous[i], False
        records.append(SubproblemRecord("pose", i, iteration, sol.status.value,
                                        sol.rel_gap, ratio, accepted))
        out.append(pose)
    return out


def _plane_phase(poses, graph, config, previous, iteration, records, failures):
    out = []
    for j in range(graph.n):
        try:
            plane, sol, ratio = _solve_plane(j, poses, graph, config.sdp_settings)
        except SubproblemError as exc:
            if previous is None:
                raise
            failures.append((iteration, "plane", j, exc.reason))
            out.append(previous[j])
            continue
        accepted = True
        if previous is not None:
            new = plane_objective(j, plane, poses, graph)
            old = plane_objective(j, previous[j], poses, graph)
            if new > old + GUARD_SLACK:
                plane, accepted = previous[j], False
        records.append(SubproblemRecord("plane", j, iteration, sol.status.value,
                                        sol.rel_gap, ratio, accepted))
        out.append(plane)
    return out


def pose_step(planes, graph: ObservationGraph, config: GpConfig | None = None, previous=None) -> list:
    """Globally optimal pose for every frame given the planes.

    Without ``previous`` any sub-problem failure raises
    :class:`SubproblemError`; with it, a failed or non-improving pose keeps its
    previous value.
    """
    config = config or GpConfig()
    return _pose_phase(planes, graph, config, previous, 0, [], [])


def plane_step(poses, graph: ObservationGraph, config: GpConfig | None = None, previous=None) -> list:
    """Globally optimal plane for every label given the poses."""
    config = config or GpConfig()
    return _plane_phase(poses, graph, config, previous, 0, [], [])


def converged_step(prev: float, cur: float, rel_tol: float) -> bool:
    return abs(cur - prev) <= rel_tol * max(prev, EPS_FLOOR)


def run_globalpointer(graph: ObservationGraph, init_poses, init_planes,
                      config: GpConfig | None = None) -> SolveReport:
    """Alternate pose and plane steps until the objective stops changing."""
    config = config or GpConfig()
    if len(init_poses) != graph.m or len(init_planes) != graph.n:
        raise ValueError("initial estimates do not match the graph")
    poses, planes = list(init_poses), list(init_planes)
    report = SolveReport(poses, planes, method="globalpointer")
    report.wall_time = {"pose": 0.0, "plane": 0.0, "total": 0.0}
    start = time.perf_counter()
    prev = total_objective(poses, planes, graph)
    report.objective_trace.append(prev)
    records = report.certificates if config.record_trace else []
    try:
        for it in range(1, config.max_iter + 1):
            t0 = time.perf_counter()
            poses = _pose_phase(planes, graph, config, poses, it, records, report.failures)
            t1 = time.perf_counter()
            planes = _plane_phase(poses, graph, config, planes, it, records, report.failures)
            t2 = time.perf_counter()
            report.wall_time["pose"] += t1 - t0
            report.wall_time["plane"] += t2 - t1
            cur = total_objective(poses, planes, graph)
            report.objective_trace.append(cur)
            report.poses, report.planes, report.iterations = poses, planes, it
            log.debug("gp iter %d objective %.6e", it, cur)
            if converged_step(prev, cur, config.rel_tol):
                report.converged = True
                break
            prev = cur
    except Exception as exc:
        report.wall_time["total"] = time.perf_counter() - start
        raise SolverError(str(exc), report) from exc
    report.wall_time["total"] = time.perf_counter() - start
    if not config.record_trace:
        report.objective_trace = report.objective_trace[-1:]
    return report
