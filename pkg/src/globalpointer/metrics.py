"""Gauge alignment and accuracy metrics against ground truth."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import ObservationGraph, total_objective

__all__ = ["MetricsRecord", "gauge_align", "compute_metrics", "rotation_error_sq"]

log = logging.getLogger(__name__)

# arccos inputs further than this outside [-1, 1] are logged before clamping
CLAMP_REPORT = 1e-9


def gauge_align(est_poses, est_planes, gt_poses):
    """Move the estimate by the rigid transform that puts pose 0 on its ground truth."""
    if not est_poses:
        raise ValueError("need at least one pose")
    G = gt_poses[0].compose(est_poses[0].inverse())
    poses = [G.compose(p) for p in est_poses]
    planes = [pl.transformed(G) for pl in est_planes]
    return poses, planes


def rotation_error_sq(R: np.ndarray, R_gt: np.ndarray):
    """``arccos((trace(R_gt^T R) - 1) / 2)^2`` and how far the argument left [-1, 1]."""
    c = (np.trace(R_gt.T @ R) - 1.0) / 2.0
    excess = max(abs(c) - 1.0, 0.0)
    return float(np.arccos(np.clip(c, -1.0, 1.0)) ** 2), excess


def _aggregate(values: np.ndarray) -> dict:
    if values.size == 0:
        return {"mean": float("nan"), "median": float("nan"), "max": float("nan")}
    return {"mean": float(np.mean(values)), "median": float(np.median(values)),
            "max": float(np.max(values))}


@dataclass
class MetricsRecord:
    e_total: float
    e_R: np.ndarray
    e_t: np.ndarray
    e_n: np.ndarray
    e_d: np.ndarray
    clamp_excess: float = 0.0
    aggregates: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("e_R", "e_t", "e_n", "e_d"):
            self.aggregates[name] = _aggregate(getattr(self, name))

    def median(self, name: str) -> float:
        return self.aggregates[name]["median"]

    def to_dict(self) -> dict:
        return {
            "e_total": self.e_total,
            "clamp_excess": self.clamp_excess,
            "aggregates": self.aggregates,
            "per_pose": {"e_R": self.e_R.tolist(), "e_t": self.e_t.tolist()},
            "per_plane": {"e_n": self.e_n.tolist(), "e_d": self.e_d.tolist()},
        }


def compute_metrics(poses, planes, gt_poses, gt_planes, graph: ObservationGraph | None = None) -> MetricsRecord:
    """Per-entity errors of aligned estimates.

    Normals and offsets are compared through their absolute values, so a
    plane with the opposite sign convention counts as exact.
    """
    if len(poses) != len(gt_poses) or len(planes) != len(gt_planes):
        raise ValueError("estimate and ground truth sizes differ")
    e_R, e_t, worst = [], [], 0.0
    for p, g in zip(poses, gt_poses):
        val, excess = rotation_error_sq(p.rotation, g.rotation)
        worst = max(worst, excess)
        e_R.append(val)
        e_t.append(float(np.sum((p.translation - g.translation) ** 2)))
    if worst > CLAMP_REPORT:
        log.warning("rotation error argument outside [-1, 1] by %.3e", worst)
    e_n = [float(np.sum((np.abs(p.normal) - np.abs(g.normal)) ** 2)) for p, g in zip(planes, gt_planes)]
    e_d = [float((abs(p.d) - abs(g.d)) ** 2) for p, g in zip(planes, gt_planes)]
    e_total = total_objective(poses, planes, graph) if graph is not None else float("nan")
    return MetricsRecord(e_total, np.array(e_R), np.array(e_t), np.array(e_n), np.array(e_d), worst)
