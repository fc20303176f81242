"""Closed-form plane-to-plane solver with up-front normal sign calibration.

Every observed ``(frame, plane)`` pair is reduced once to a locally fitted
plane. Normal signs (and initial rotations) are fixed with rotation-only
SDPs, after which poses and planes alternate through closed-form updates of
the plane-to-plane objective.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    GeometryError,
    ObservationGraph,
    Plane,
    Pose,
    ScatterMatrix,
    canonical_quat,
    plane_to_plane_sq,
    quat_to_rot,
    total_objective,
)
from .gp import SolveReport, SolverError, SubproblemRecord, converged_step
from .relax import build_quat_cross_matrix, build_rotation_only_sdp, recover_signs
from .sdp import SdpError, SdpSettings, round_rank1, solve_sdp

__all__ = [
    "LocalPlaneFit",
    "GppConfig",
    "Calibration",
    "CalibrationError",
    "fit_local_plane",
    "fit_all",
    "calibrate_normals",
    "closed_form_pose",
    "closed_form_plane",
    "plane_to_plane_objective",
    "run_globalpointer_pp",
]

log = logging.getLogger(__name__)

REGISTRATION_PLANES = 5


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class LocalPlaneFit:
    frame_id: int
    plane_id: int
    n_local: np.ndarray
    d_local: float
    residual: float
    point_count: int

    def flipped(self) -> "LocalPlaneFit":
        return LocalPlaneFit(self.frame_id, self.plane_id, -self.n_local, -self.d_local,
                             self.residual, self.point_count)

    @property
    def plane(self) -> Plane:
        return Plane(self.n_local, self.d_local)


@dataclass(frozen=True)
class GppConfig:
    max_iter: int = 200
    rel_tol: float = 1e-4
    calibration_mode: str = "incremental"
    sdp_settings: SdpSettings = SdpSettings()
    # planes per rotation-only solve; None uses every shared plane
    registration_planes: int | None = REGISTRATION_PLANES

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if self.registration_planes is not None and self.registration_planes < 3:
            raise ValueError("registration_planes must be >= 3")
        if self.calibration_mode not in ("incremental", "joint"):
            raise ValueError("calibration_mode must be 'incremental' or 'joint'")


@dataclass
class Calibration:
    """Sign-consistent fits, the signs applied, and per-frame rotations."""
    fits: dict
    theta: dict
    rotations: list
    reference: dict
    records: list = field(default_factory=list)


def fit_local_plane(b: ScatterMatrix, frame_id: int = 0, plane_id: int = 0) -> LocalPlaneFit:
    """Plane minimizing the point-to-plane error of one scatter.

    The optimal offset for a normal ``n`` is ``-B_dd^-1 B_dn n``, which leaves
    the Schur complement ``S`` (the centred second moment) as the cost over
    unit normals.
    """
    if b.count < 3:
        raise GeometryError("insufficient points")
    S = 0.5 * (b.cov + b.cov.T)
    lam, V = np.linalg.eigh(S)
    tr = float(np.trace(S))
    if tr <= 0.0 or lam[1] / tr < 1e-12:
        raise GeometryError("degenerate plane fit")
    plane = Plane(V[:, 0], -float(V[:, 0] @ b.centroid)).canonical()
    residual = max(float(plane.normal @ S @ plane.normal), 0.0)
    return LocalPlaneFit(frame_id, plane_id, plane.normal, plane.d, residual, b.count)


def fit_all(graph: ObservationGraph) -> dict:
    return {(i, j): fit_local_plane(graph.scatters[(i, j)], i, j) for (i, j) in graph.edges}


def _rank3(normals) -> bool:
    return len(normals) >= 3 and np.linalg.matrix_rank(np.array(normals), tol=1e-6) == 3


def _select(local, k):
    """Indices of up to ``k`` well-spread normals, chosen greedily."""
    if k is None or len(local) <= k:
        return list(range(len(local)))
    chosen = [0]
    while len(chosen) < k:
        best, score = None, -1.0
        for c in range(len(local)):
            if c in chosen:
                continue
            N = np.array([local[a] for a in chosen + [c]])
            sv = np.linalg.svd(N, compute_uv=False)
            val = sv[min(len(N), 3) - 1]
            if val > score:
                best, score = c, val
        chosen.append(best)
    return sorted(chosen)


def _register(i, local, reference, settings, max_planes=None, records=None):
    """Rotation and signs of frame ``i`` against reference normals.

    The rotation-only SDP runs on at most ``max_planes`` of the pairs; the
    remaining signs are the ones that agree best with the recovered rotation.
    """
    sub = _select(local, max_planes)
    problem = build_rotation_only_sdp([local[a] for a in sub], [reference[a] for a in sub])
    sol = solve_sdp(problem, settings)
    if not sol.optimal:
        raise CalibrationError(f"frame {i}: rotation-only solve ended with {sol.status.value}")
    try:
        q, theta_sub = recover_signs(sol, len(sub))
        _, ratio = round_rank1(sol.x_matrix)
    except SdpError as exc:
        raise CalibrationError(f"frame {i}: {exc}") from exc
    if records is not None:
        records.append(SubproblemRecord("rotation", i, 0, sol.status.value, sol.rel_gap, ratio, True))
    R = q.rotation()
    theta = np.array([1 if reference[a] @ (R @ local[a]) >= 0 else -1 for a in range(len(local))])
    theta[sub] = theta_sub
    return R, theta


def calibrate_normals(fits: dict, m: int, reference: dict | None = None,
                      mode: str = "incremental", settings: SdpSettings | None = None,
                      max_planes: int | None = None) -> Calibration:
    """Flip local normals so that each agrees with a common global direction.

    ``fits`` maps ``(frame, plane)`` to :class:`LocalPlaneFit`. In incremental
    mode the reference starts as frame 0's fits and accumulates the rotated,
    sign-corrected normals of every registered frame; frames are registered in
    order of how many reference planes they share. In joint mode every frame is
    registered against a fixed reference (``reference`` or, by default, frame
    0's fits, which must then cover every plane). ``max_planes`` caps the
    number of planes in each rotation-only solve.
    """
    settings = settings or SdpSettings()
    records: list = []
    by_frame = [[] for _ in range(m)]
    for (i, j) in sorted(fits):
        by_frame[i].append(j)
    if any(len(js) < 2 for js in by_frame):
        raise CalibrationError("every frame needs at least two fitted planes")

    theta = {(0, j): 1 for j in by_frame[0]}
    rotations = [None] * m
    rotations[0] = np.eye(3)
    if reference is None:
        reference = {j: fits[(0, j)].n_local.copy() for j in by_frame[0]}
        fixed_frame0 = True
    else:
        reference = {j: np.asarray(v, dtype=float) for j, v in reference.items()}
        fixed_frame0 = False
    accum = {j: v.copy() for j, v in reference.items()}

    if mode == "joint":
        all_planes = {j for js in by_frame for j in js}
        if not all_planes <= set(reference):
            raise CalibrationError("joint calibration needs a reference normal for every plane")
        todo = list(range(m)) if not fixed_frame0 else list(range(1, m))
        for i in todo:
            js = by_frame[i]
            R, th = _register(i, [fits[(i, j)].n_local for j in js], [reference[j] for j in js], settings,
                                max_planes, records)
            rotations[i] = R
            theta.update({(i, j): int(t) for j, t in zip(js, th)})
    elif mode == "incremental":
        pending = set(range(m)) - ({0} if fixed_frame0 else set())
        while pending:
            def shared(i):
                return [j for j in by_frame[i] if j in accum]
            ready = [i for i in sorted(pending) if _rank3([accum[j] for j in shared(i)])]
            if not ready:
                raise CalibrationError(f"frames {sorted(pending)} share too few planes with the reference")
            i = max(ready, key=lambda k: (len(shared(k)), -k))
            js = shared(i)
            ref = [accum[j] / np.linalg.norm(accum[j]) for j in js]
            R, th = _register(i, [fits[(i, j)].n_local for j in js], ref, settings, max_planes, records)
            rotations[i] = R
            theta.update({(i, j): int(t) for j, t in zip(js, th)})
            for j in by_frame[i]:
                g = R @ fits[(i, j)].n_local
                if j in accum:
                    accum[j] = accum[j] + theta[(i, j)] * g
                else:
                    # new plane: adopt the canonical world direction
                    s = 1 if Plane(g, 0.0).canonical().normal @ g > 0 else -1
                    theta[(i, j)] = s
                    accum[j] = s * g
            pending.discard(i)
    else:
        raise ValueError("mode must be 'incremental' or 'joint'")

    out = {key: (f if theta[key] > 0 else f.flipped()) for key, f in fits.items()}
    ref_out = {j: v / np.linalg.norm(v) for j, v in accum.items()}
    return Calibration(out, theta, rotations, ref_out, records)


def closed_form_pose(fits, planes) -> Pose:
    """Pose minimizing the plane-to-plane error of one frame.

    ``fits`` are the calibrated fits of the frame; ``planes`` is indexable by
    plane id. The rotation comes from the normal term alone, the translation
    from the offsets given that rotation.
    """
    fits = list(fits)
    if len(fits) < 3:
        raise GeometryError("need at least 3 planes for a pose")
    M = np.zeros((4, 4))
    for f in fits:
        M += build_quat_cross_matrix(planes[f.plane_id].normal, f.n_local)
    _, V = np.linalg.eigh(0.5 * (M + M.T))
    R = quat_to_rot(canonical_quat(V[:, 0]))
    A = np.array([R @ f.n_local for f in fits])
    rhs = np.array([f.d_local - planes[f.plane_id].d for f in fits])
    if np.linalg.matrix_rank(A, tol=1e-6) < 3:
        raise GeometryError("underdetermined translation")
    t = np.linalg.lstsq(A, rhs, rcond=None)[0]
    return Pose(R, t)


def closed_form_plane(fits, poses) -> Plane:
    """Plane minimizing the plane-to-plane error over its observations.

    The normal is the top eigenvector of ``s s^T`` for ``s = sum_i R_i n_ij``,
    i.e. the direction of ``s``; the offset is the mean mapped local offset.
    """
    fits = list(fits)
    if not fits:
        raise GeometryError("unobserved plane")
    s = np.zeros(3)
    ds = []
    for f in fits:
        pose = poses[f.frame_id]
        s += pose.rotation @ f.n_local
        ds.append(f.d_local - f.n_local @ (pose.rotation.T @ pose.translation))
    norm = float(np.linalg.norm(s))
    if norm < 1e-9:
        raise GeometryError("cancelling normals")
    _, V = np.linalg.eigh(np.outer(s, s))
    n = V[:, -1] if V[:, -1] @ s > 0 else -V[:, -1]
    return Plane(n, float(np.mean(ds)))


def plane_to_plane_objective(poses, planes, fits: dict) -> float:
    return float(sum(plane_to_plane_sq(poses[i], f.plane, planes[j]) for (i, j), f in fits.items()))


def _frame_objective(i, pose, planes, per_frame):
    return sum(plane_to_plane_sq(pose, f.plane, planes[f.plane_id]) for f in per_frame[i])


def run_globalpointer_pp(graph: ObservationGraph, config: GppConfig | None = None) -> SolveReport:
    """Fit, calibrate, then alternate closed-form pose and plane updates.

    Planes start from the calibrated normals with every translation at the
    origin. The plane-to-plane objective drives the stopping rule; the
    point-to-plane objective is recorded alongside it.
    """
    config = config or GppConfig()
    start = time.perf_counter()
    report = SolveReport([], [], method="globalpointer-pp")
    report.wall_time = {"fit": 0.0, "calibrate": 0.0, "pose": 0.0, "plane": 0.0, "total": 0.0}
    try:
        fits = fit_all(graph)
        t0 = time.perf_counter()
        report.wall_time["fit"] = t0 - start
        cal = calibrate_normals(fits, graph.m, mode=config.calibration_mode,
                                settings=config.sdp_settings, max_planes=config.registration_planes)
        report.wall_time["calibrate"] = time.perf_counter() - t0
    except (GeometryError, CalibrationError, SdpError) as exc:
        report.wall_time["total"] = time.perf_counter() - start
        raise SolverError(f"calibration failed: {exc}", report) from exc

    report.certificates.extend(cal.records)
    fits = cal.fits
    per_frame = [[] for _ in range(graph.m)]
    per_plane = [[] for _ in range(graph.n)]
    for (i, j) in sorted(fits):
        per_frame[i].append(fits[(i, j)])
        per_plane[j].append(fits[(i, j)])
    poses = [Pose(R, np.zeros(3)) for R in cal.rotations]
    try:
        planes = [closed_form_plane(per_plane[j], poses) for j in range(graph.n)]
        prev = plane_to_plane_objective(poses, planes, fits)
        report.p2p_trace.append(prev)
        report.objective_trace.append(total_objective(poses, planes, graph))
        for it in range(1, config.max_iter + 1):
            t0 = time.perf_counter()
            new_poses = []
            for i in range(graph.m):
                cand = closed_form_pose(per_frame[i], planes)
                # the rotation is fixed before the translation, so a pose
                # update is not guaranteed to lower the frame's error
                if _frame_objective(i, cand, planes, per_frame) > _frame_objective(i, poses[i], planes, per_frame):
                    cand = poses[i]
                new_poses.append(cand)
            poses = new_poses
            t1 = time.perf_counter()
            planes = [closed_form_plane(per_plane[j], poses) for j in range(graph.n)]
            t2 = time.perf_counter()
            report.wall_time["pose"] += t1 - t0
            report.wall_time["plane"] += t2 - t1
            cur = plane_to_plane_objective(poses, planes, fits)
            report.p2p_trace.append(cur)
            report.objective_trace.append(total_objective(poses, planes, graph))
            report.poses, report.planes, report.iterations = poses, planes, it
            if converged_step(prev, cur, config.rel_tol):
                report.converged = True
                break
            prev = cur
    except GeometryError as exc:
        report.wall_time["total"] = time.perf_counter() - start
        raise SolverError(str(exc), report) from exc
    report.poses, report.planes = poses, planes
    report.wall_time["total"] = time.perf_counter() - start
    return report
