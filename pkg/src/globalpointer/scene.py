"""Synthetic plane-adjustment scenes.

Poses sit uniformly inside a cube of half-extent ``box_half_extent`` with
uniformly random orientations. Each plane passes through a random anchor point
inside the cube with a uniformly random normal. Every retained (pose, plane)
pair gets ``points_per_obs`` points drawn uniformly from a disc of radius
``PATCH_RADIUS`` around the anchor (clipped to the cube), expressed in the
pose's local frame, with isotropic Gaussian noise added in that local frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    ObservationGraph,
    Plane,
    Pose,
    axis_angle_to_rot,
    random_rotation,
)

__all__ = [
    "PATCH_RADIUS",
    "SceneError",
    "SceneSpec",
    "Scene",
    "generate_scene",
    "make_overlap_mask",
    "min_overlap_pairs",
    "perturb_init",
    "random_init",
    "random_unit_vectors",
]

PATCH_RADIUS = 10.0
MAX_ATTEMPTS = 100


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    m: int
    n: int
    box_half_extent: float = 25.0
    points_per_obs: int = 100
    sigma_p: float = 0.0
    overlap: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.m < 2:
            raise SceneError("need at least 2 poses")
        if self.n < 4:
            raise SceneError("need at least 4 planes")
        if not (0.0 < self.overlap <= 1.0):
            raise SceneError("overlap must lie in (0, 1]")
        if self.points_per_obs < 3:
            raise SceneError("need at least 3 points per observation")
        if self.sigma_p < 0 or self.box_half_extent <= 0:
            raise SceneError("sigma_p must be >= 0 and the box non-empty")
        if _quota(self.m, self.n, self.overlap) < min_overlap_pairs(self.m, self.n):
            raise SceneError("cannot satisfy overlap")


@dataclass
class Scene:
    spec: SceneSpec
    poses: list
    planes: list
    graph: ObservationGraph

    @property
    def m(self) -> int:
        return self.graph.m

    @property
    def n(self) -> int:
        return self.graph.n


def random_unit_vectors(rng: np.random.Generator, k: int) -> np.ndarray:
    v = rng.standard_normal((k, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _quota(m: int, n: int, overlap: float) -> int:
    return int(math.ceil(overlap * m * n - 1e-9))


def min_overlap_pairs(m: int, n: int) -> int:
    """Fewest pairs that let every pose see 4 planes and every plane be seen twice."""
    return max(4 * m, 2 * n, m + n - 1)


def _connected(m: int, n: int, pairs) -> bool:
    parent = list(range(m + n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in pairs:
        ra, rb = find(i), find(m + j)
        if ra != rb:
            parent[ra] = rb
    root = find(0)
    return all(find(a) == root for a in range(m + n))


def _mask_ok(m, n, pairs, normals) -> bool:
    per_pose = [[] for _ in range(m)]
    per_plane = [0] * n
    for i, j in pairs:
        per_pose[i].append(j)
        per_plane[j] += 1
    if any(len(js) < 4 for js in per_pose) or any(c < 2 for c in per_plane):
        return False
    if normals is not None:
        for js in per_pose:
            if np.linalg.matrix_rank(normals[js], tol=1e-6) < 3:
                return False
    return _connected(m, n, pairs)


def make_overlap_mask(m: int, n: int, overlap: float, rng: np.random.Generator,
                      normals: np.ndarray | None = None) -> set:
    """Random set of observed ``(pose, plane)`` pairs.

    Keeps ``ceil(overlap * m * n)`` pairs such that each pose sees at least 4
    planes (whose ``normals``, when given, span 3-D), each plane is seen at
    least twice, and the bipartite graph is connected.
    """
    if not (0.0 < overlap <= 1.0):
        raise SceneError("overlap must lie in (0, 1]")
    if n < 4:
        raise SceneError("need at least 4 planes")
    quota = _quota(m, n, overlap)
    if quota < min_overlap_pairs(m, n):
        raise SceneError("cannot satisfy overlap")
    full = {(i, j) for i in range(m) for j in range(n)}
    if quota >= m * n:
        if normals is not None and not _mask_ok(m, n, full, normals):
            raise SceneError("cannot satisfy overlap")
        return full
    for _ in range(MAX_ATTEMPTS):
        pairs = set()
        # four distinct planes per pose, dealt from shuffled decks so that
        # plane degrees stay balanced
        deck: list = []
        for i in range(m):
            chosen: list = []
            while len(chosen) < 4:
                if not deck:
                    deck = list(rng.permutation(n))
                j = int(deck.pop())
                if j not in chosen:
                    chosen.append(j)
            pairs.update((i, j) for j in chosen)
        degree = np.zeros(n, dtype=int)
        for _, j in pairs:
            degree[j] += 1
        for j in np.nonzero(degree < 2)[0]:
            while degree[j] < 2:
                i = int(rng.integers(m))
                if (i, int(j)) not in pairs:
                    pairs.add((i, int(j)))
                    degree[j] += 1
        if len(pairs) > quota:
            continue
        rest = sorted(full - pairs)
        extra = rng.choice(len(rest), size=quota - len(pairs), replace=False)
        pairs.update(rest[k] for k in extra)
        if _mask_ok(m, n, pairs, normals):
            return pairs
    raise SceneError("cannot satisfy overlap")


def _plane_basis(normal: np.ndarray):
    a = np.eye(3)[int(np.argmin(np.abs(normal)))]
    u = np.cross(normal, a)
    u /= np.linalg.norm(u)
    return u, np.cross(normal, u)


def _sample_patch(rng, anchor, normal, count, half):
    u, v = _plane_basis(normal)
    out = np.empty((0, 3))
    while out.shape[0] < count:
        k = 2 * (count - out.shape[0]) + 8
        r = PATCH_RADIUS * np.sqrt(rng.random(k))
        phi = 2.0 * np.pi * rng.random(k)
        P = anchor + (r * np.cos(phi))[:, None] * u + (r * np.sin(phi))[:, None] * v
        P = P[np.all(np.abs(P) <= half, axis=1)]
        out = np.vstack([out, P])
    return out[:count]


def generate_scene(spec: SceneSpec) -> Scene:
    rng = np.random.default_rng(spec.seed)
    L = spec.box_half_extent
    poses = [Pose(random_rotation(rng), rng.uniform(-L, L, 3)) for _ in range(spec.m)]
    normals = random_unit_vectors(rng, spec.n)
    anchors = rng.uniform(-L, L, (spec.n, 3))
    planes = [Plane(nv, -nv @ q).canonical() for nv, q in zip(normals, anchors)]
    mask = make_overlap_mask(spec.m, spec.n, spec.overlap, rng, normals)
    points = {}
    for (i, j) in sorted(mask):
        P = _sample_patch(rng, anchors[j], normals[j], spec.points_per_obs, L)
        pose = poses[i]
        local = (P - pose.translation) @ pose.rotation
        if spec.sigma_p > 0:
            local = local + spec.sigma_p * rng.standard_normal(local.shape)
        points[(i, j)] = local
    return Scene(spec, poses, planes, ObservationGraph.from_points(spec.m, spec.n, points))


def perturb_init(poses, sigma_R: float, sigma_t: float, rng: np.random.Generator) -> list:
    """Compose each pose with a random rotation of angle ``|N(0, sigma_R)|``
    about a uniform axis and shift it by ``N(0, sigma_t^2 I)``."""
    out = []
    for pose in poses:
        axis = random_unit_vectors(rng, 1)[0]
        angle = abs(rng.normal(0.0, sigma_R)) if sigma_R > 0 else 0.0
        dt = rng.normal(0.0, sigma_t, 3) if sigma_t > 0 else np.zeros(3)
        out.append(Pose(pose.rotation @ axis_angle_to_rot(axis, angle), pose.translation + dt))
    return out


def random_init(spec: SceneSpec, rng: np.random.Generator):
    """Uniformly random poses (in the box) and planes.

    Only ``spec.m``, ``spec.n`` and ``spec.box_half_extent`` are read.
    """
    L = spec.box_half_extent
    poses = [Pose(random_rotation(rng), rng.uniform(-L, L, 3)) for _ in range(spec.m)]
    normals = random_unit_vectors(rng, spec.n)
    planes = [Plane(nv, rng.uniform(-L, 0.0)).canonical() for nv in normals]
    return poses, planes
