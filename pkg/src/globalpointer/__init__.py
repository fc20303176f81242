"""Multi-frame plane adjustment by alternating convex relaxations.

``run_globalpointer`` alternates small pose-only and plane-only SDPs on the
point-to-plane objective; ``run_globalpointer_pp`` fits local planes once,
calibrates their signs and then alternates closed-form updates on the
plane-to-plane objective.
"""
from .geometry import (
    GeometryError,
    ObservationGraph,
    Plane,
    Pose,
    ScatterMatrix,
    UnitQuaternion,
    accumulate_scatter,
    total_objective,
)
from .gp import GpConfig, SolveReport, SolverError, run_globalpointer
from .gpp import GppConfig, fit_local_plane, run_globalpointer_pp
from .metrics import MetricsRecord, compute_metrics, gauge_align
from .scene import Scene, SceneSpec, generate_scene, perturb_init, random_init
from .sdp import SdpProblem, SdpSettings, SdpSolution, SdpStatus, certify, solve_sdp

__version__ = "0.1.0"

__all__ = [
    "GeometryError", "ObservationGraph", "Plane", "Pose", "ScatterMatrix", "UnitQuaternion",
    "accumulate_scatter", "total_objective",
    "GpConfig", "SolveReport", "SolverError", "run_globalpointer",
    "GppConfig", "fit_local_plane", "run_globalpointer_pp",
    "MetricsRecord", "compute_metrics", "gauge_align",
    "Scene", "SceneSpec", "generate_scene", "perturb_init", "random_init",
    "SdpProblem", "SdpSettings", "SdpSolution", "SdpStatus", "certify", "solve_sdp",
]
