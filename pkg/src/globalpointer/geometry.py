"""Rigid-body and plane primitives shared by every solver.

Conventions
-----------
* A pose maps local sensor coordinates to world coordinates,
  ``P = R @ p + t``.
* A plane is stored as a unit normal ``n`` and offset ``d`` so that points on
  it satisfy ``n @ P + d == 0``. The pair ``(n, d)`` and ``(-n, -d)`` describe
  the same plane; :meth:`Plane.canonical` picks ``d <= 0`` (ties broken by the
  first nonzero normal component being positive).
* Quaternions are Hamilton, scalar first (``w, x, y, z``).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GeometryError",
    "Pose",
    "UnitQuaternion",
    "Plane",
    "LabeledPoint",
    "ScatterMatrix",
    "ObservationGraph",
    "transform_point",
    "point_to_plane_sq",
    "plane_to_plane_sq",
    "accumulate_scatter",
    "total_objective",
    "pose_objective",
    "plane_objective",
    "per_point_objective",
    "project_to_so3",
    "quat_to_rot",
    "rot_to_quat",
    "canonical_quat",
    "random_rotation",
    "axis_angle_to_rot",
    "rotation_angle",
]


class GeometryError(ValueError):
    """Raised for degenerate geometric input."""


def _first_nonzero_positive(v: np.ndarray) -> bool:
    for x in v:
        if x != 0.0:
            return x > 0.0
    return True


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 transform ``[R t; 0 1]``."""
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return (np.linalg.norm(R.T @ R - np.eye(3)) < tol
                and abs(np.linalg.det(R) - 1.0) < tol)


@dataclass(frozen=True)
class UnitQuaternion:
    wxyz: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.wxyz, dtype=float).reshape(4)
        nrm = np.linalg.norm(q)
        if nrm == 0.0:
            raise GeometryError("zero quaternion")
        object.__setattr__(self, "wxyz", canonical_quat(q / nrm))

    def rotation(self) -> np.ndarray:
        return quat_to_rot(self.wxyz)

    @classmethod
    def from_rotation(cls, R: np.ndarray) -> "UnitQuaternion":
        return cls(rot_to_quat(R))


@dataclass(frozen=True)
class Plane:
    normal: np.ndarray
    d: float

    def __post_init__(self):
        object.__setattr__(self, "normal", np.asarray(self.normal, dtype=float).reshape(3))
        object.__setattr__(self, "d", float(self.d))

    @classmethod
    def from_vector(cls, b: np.ndarray, canonical: bool = True) -> "Plane":
        """Build from a 4-vector ``[n; d]``, rescaling so that ``|n| = 1``."""
        b = np.asarray(b, dtype=float)
        nrm = np.linalg.norm(b[:3])
        if nrm < 1e-300:
            raise GeometryError("degenerate normal")
        p = cls(b[:3] / nrm, b[3] / nrm)
        return p.canonical() if canonical else p

    @classmethod
    def from_point_normal(cls, point, normal) -> "Plane":
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        return cls(n, -n @ np.asarray(point, dtype=float)).canonical()

    def vector(self) -> np.ndarray:
        return np.append(self.normal, self.d)

    def canonical(self) -> "Plane":
        if self.d < 0.0 or (self.d == 0.0 and _first_nonzero_positive(self.normal)):
            return self
        return Plane(-self.normal, -self.d)

    def flipped(self) -> "Plane":
        return Plane(-self.normal, -self.d)

    def transformed(self, pose: Pose) -> "Plane":
        """The same plane expressed after moving space by ``pose``.

        If ``self`` holds in the frame that ``pose`` maps from, the result
        holds in the frame it maps to. No sign canonicalization.
        """
        n = pose.rotation @ self.normal
        return Plane(n, self.d - n @ pose.translation)


@dataclass(frozen=True)
class LabeledPoint:
    frame_id: int
    plane_id: int
    p_local: np.ndarray


@dataclass(frozen=True)
class ScatterMatrix:
    """Homogeneous scatter ``B`` of ``count`` points.

    ``centroid`` and ``cov`` (the centred second moment) are derived from
    ``b`` unless given; when they come straight from the points they keep
    objective evaluations non-negative and accurate for far-off clouds.
    """
    b: np.ndarray
    count: int
    centroid: np.ndarray | None = field(default=None, compare=False)
    cov: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.centroid is None or self.cov is None:
            B = np.asarray(self.b, dtype=float)
            w = B[3, 3]
            c = B[:3, 3] / w if w > 0 else np.zeros(3)
            object.__setattr__(self, "centroid", c)
            object.__setattr__(self, "cov", B[:3, :3] - w * np.outer(c, c))

    @property
    def degenerate(self) -> bool:
        return self.count < 3


def accumulate_scatter(points) -> ScatterMatrix:
    """Sum of homogeneous outer products ``[p;1][p;1]^T`` over ``points``."""
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    if P.shape[0] == 0:
        raise GeometryError("empty observation")
    H = np.empty((P.shape[0], 4))
    H[:, :3] = P
    H[:, 3] = 1.0
    B = H.T @ H
    B = 0.5 * (B + B.T)
    B[3, 3] = float(P.shape[0])
    c = P.mean(axis=0)
    Q = P - c
    return ScatterMatrix(B, int(P.shape[0]), c, Q.T @ Q)


@dataclass
class ObservationGraph:
    """Bipartite pose/plane observation structure with one scatter per edge.

    ``points`` is optional; when present it holds the raw local points of each
    ``(i, j)`` pair, in the order they were accumulated.
    """
    m: int
    n: int
    scatters: dict
    points: dict | None = None
    _planes_of: list = field(init=False, repr=False)
    _poses_of: list = field(init=False, repr=False)

    def __post_init__(self):
        self._planes_of = [[] for _ in range(self.m)]
        self._poses_of = [[] for _ in range(self.n)]
        for (i, j) in sorted(self.scatters):
            if not (0 <= i < self.m and 0 <= j < self.n):
                raise GeometryError(f"observation ({i}, {j}) out of range")
            self._planes_of[i].append(j)
            self._poses_of[j].append(i)

    @classmethod
    def from_points(cls, m: int, n: int, points: dict) -> "ObservationGraph":
        scatters = {key: accumulate_scatter(P) for key, P in points.items()}
        pts = {key: np.asarray(P, dtype=float).reshape(-1, 3) for key, P in points.items()}
        return cls(m, n, scatters, pts)

    @property
    def edges(self) -> list:
        return sorted(self.scatters)

    def planes_of(self, i: int) -> list:
        return self._planes_of[i]

    def poses_of(self, j: int) -> list:
        return self._poses_of[j]

    def point_count(self) -> int:
        return sum(s.count for s in self.scatters.values())

    def degenerate_pairs(self) -> list:
        return [key for key in self.edges if self.scatters[key].degenerate]

    def is_covered(self) -> bool:
        return all(self._planes_of) and all(self._poses_of)

    def is_determinable(self, i: int, normals) -> bool:
        """Whether pose ``i`` is pinned down by the given plane normals."""
        js = self._planes_of[i]
        if len(js) < 4:
            return False
        N = np.array([normals[j] for j in js])
        return np.linalg.matrix_rank(N, tol=1e-6) == 3

    def is_well_posed(self, normals) -> bool:
        return self.is_covered() and all(self.is_determinable(i, normals) for i in range(self.m))

    def labeled_points(self):
        """Iterate :class:`LabeledPoint` records (requires raw points)."""
        if self.points is None:
            raise GeometryError("graph carries no raw points")
        for (i, j) in self.edges:
            for p in self.points[(i, j)]:
                yield LabeledPoint(i, j, p)


def transform_point(pose: Pose, p_local) -> np.ndarray:
    return pose.rotation @ np.asarray(p_local, dtype=float) + pose.translation


def point_to_plane_sq(plane: Plane, p_global) -> float:
    r = plane.normal @ np.asarray(p_global, dtype=float) + plane.d
    return float(r * r)


def plane_to_plane_sq(pose: Pose, local: Plane, global_: Plane) -> float:
    """Squared discrepancy between a local plane mapped to world and a world plane."""
    n_g = pose.rotation @ local.normal
    d_g = local.d - local.normal @ (pose.rotation.T @ pose.translation)
    return float(np.sum((n_g - global_.normal) ** 2) + (global_.d - d_g) ** 2)


def _quad(pose: Pose, plane: Plane, s: ScatterMatrix) -> float:
    # b^T T B T^T b with T^T b = [R^T n; n.t + d], split about the centroid
    u = pose.rotation.T @ plane.normal
    r = u @ s.centroid + plane.normal @ pose.translation + plane.d
    return float(max(s.b[3, 3] * r * r + u @ s.cov @ u, 0.0))


def total_objective(poses, planes, graph: ObservationGraph) -> float:
    """Total point-to-plane error over every labeled point, via scatters."""
    return float(sum(_quad(poses[i], planes[j], s) for (i, j), s in graph.scatters.items()))


def pose_objective(i: int, pose: Pose, planes, graph: ObservationGraph) -> float:
    return float(sum(_quad(pose, planes[j], graph.scatters[(i, j)]) for j in graph.planes_of(i)))


def plane_objective(j: int, plane: Plane, poses, graph: ObservationGraph) -> float:
    return float(sum(_quad(poses[i], plane, graph.scatters[(i, j)]) for i in graph.poses_of(j)))


def per_point_objective(poses, planes, graph: ObservationGraph) -> float:
    """Brute-force point-by-point evaluation (needs raw points)."""
    if graph.points is None:
        raise GeometryError("graph carries no raw points")
    total = 0.0
    for (i, j), P in graph.points.items():
        G = P @ poses[i].rotation.T + poses[i].translation
        r = G @ planes[j].normal + planes[j].d
        total += float(r @ r)
    return total


def project_to_so3(m: np.ndarray) -> np.ndarray:
    """Nearest rotation in Frobenius norm (special orthogonal polar factor)."""
    m = np.asarray(m, dtype=float).reshape(3, 3)
    U, s, Vt = np.linalg.svd(m)
    if s[-1] <= 1e-12 * max(s[0], 1e-300):
        raise GeometryError("degenerate rotation estimate")
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def canonical_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0 or (q[0] == 0.0 and not _first_nonzero_positive(q[1:])):
        return -q
    return q


def quat_to_rot(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ])


def rot_to_quat(R) -> np.ndarray:
    """Canonical unit quaternion of a rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    diag = np.diag(R)
    k = int(np.argmax([tr, *diag]))
    if k == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif k == 1:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif k == 2:
        s = 2.0 * np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return canonical_quat(q / np.linalg.norm(q))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform rotation on SO(3) from a normalized 4-D Gaussian."""
    return quat_to_rot(rng.standard_normal(4))


def axis_angle_to_rot(axis, angle: float) -> np.ndarray:
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rotation_angle(R_a: np.ndarray, R_b: np.ndarray) -> float:
    """Geodesic distance between two rotations, in radians."""
    c = 0.5 * (np.trace(R_a.T @ R_b) - 1.0)
    return float(np.arccos(np.clip(c, -1.0, 1.0)))
