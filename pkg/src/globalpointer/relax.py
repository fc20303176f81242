"""Pose-only, plane-only and rotation-only SDP relaxations and their rounding.

Lifted pose layout (13 entries)::

    x = [R00 R01 R02 R10 R11 R12 R20 R21 R22, t0 t1 t2, h]

i.e. the rotation in row-major order, then the translation, then a
homogenizing slot ``h`` with ``h**2 = 1``. The constant last row of the 4x4
transform is eliminated rather than constrained.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .geometry import (
    GeometryError,
    ObservationGraph,
    Plane,
    Pose,
    ScatterMatrix,
    UnitQuaternion,
    axis_angle_to_rot,
    canonical_quat,
    project_to_so3,
)
from .sdp import SdpError, SdpProblem, SdpSolution, round_rank1

__all__ = [
    "POSE_DIM",
    "H_SLOT",
    "encode_pose",
    "encode_plane",
    "encode_rotation",
    "quat_left",
    "quat_right",
    "build_quat_cross_matrix",
    "pose_cost",
    "pose_constraints",
    "build_pose_sdp",
    "plane_cost",
    "build_plane_sdp",
    "build_rotation_only_sdp",
    "recover_pose",
    "recover_plane",
    "recover_signs",
    "refine_pose",
    "normalized_pose_problem",
    "normalized_plane_problem",
]

POSE_DIM = 13
H_SLOT = 12


def _r(row: int, col: int) -> int:
    return 3 * row + col


def _t(k: int) -> int:
    return 9 + k


def encode_pose(pose: Pose) -> np.ndarray:
    return np.concatenate([pose.rotation.reshape(-1), pose.translation, [1.0]])


def encode_plane(plane: Plane) -> np.ndarray:
    return plane.vector()


def encode_rotation(q, theta) -> np.ndarray:
    """Stacked vector ``[q; theta_1 q; ...; theta_n q]``."""
    q = np.asarray(q, dtype=float)
    return np.concatenate([q] + [t * q for t in theta])


@lru_cache(maxsize=1)
def _lift16() -> np.ndarray:
    # rows of the 4x4 transform, concatenated, as a linear map of x
    E = np.zeros((16, POSE_DIM))
    for c in range(3):
        for a in range(3):
            E[4 * c + a, _r(c, a)] = 1.0
        E[4 * c + 3, _t(c)] = 1.0
    E[15, H_SLOT] = 1.0
    return E


def pose_cost(i: int, planes, graph: ObservationGraph) -> np.ndarray:
    """Cost ``C`` with ``x^T C x = sum_j b_j^T T_i B(i,j) T_i^T b_j``.

    Built from ``sum_j (b_j b_j^T) kron B(i, j)`` acting on the row-stacked
    transform, then restricted to the 13-entry layout.
    """
    C16 = np.zeros((16, 16))
    for j in graph.planes_of(i):
        bj = planes[j].vector()
        C16 += np.kron(np.outer(bj, bj), graph.scatters[(i, j)].b)
    E = _lift16()
    C = E.T @ C16 @ E
    return 0.5 * (C + C.T)


def _sym_unit(n: int, i: int, j: int) -> np.ndarray:
    A = np.zeros((n, n))
    A[i, j] += 0.5
    A[j, i] += 0.5
    return A


@lru_cache(maxsize=1)
def _pose_constraints_cached():
    n = POSE_DIM
    As, bs = [], []
    Ah = np.zeros((n, n))
    Ah[H_SLOT, H_SLOT] = 1.0
    As.append(Ah)
    bs.append(1.0)
    hh = Ah
    # R^T R = I  (column inner products)
    for a in range(3):
        for b in range(a, 3):
            A = sum(_sym_unit(n, _r(c, a), _r(c, b)) for c in range(3))
            if a == b:
                A = A - hh
            As.append(A)
            bs.append(0.0)
    # R R^T = I  (row inner products)
    for a in range(3):
        for b in range(a, 3):
            A = sum(_sym_unit(n, _r(a, c), _r(b, c)) for c in range(3))
            if a == b:
                A = A - hh
            As.append(A)
            bs.append(0.0)
    # column_a x column_b = column_c for cyclic (a, b, c)
    for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        for k, k1, k2 in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
            A = (_sym_unit(n, _r(k1, a), _r(k2, b))
                 - _sym_unit(n, _r(k2, a), _r(k1, b))
                 - _sym_unit(n, _r(k, c), H_SLOT))
            As.append(A)
            bs.append(0.0)
    A = np.array(As)
    A.setflags(write=False)
    b = np.array(bs)
    b.setflags(write=False)
    return A, b


def pose_constraints():
    """All 22 constraints of the lifted pose variable: ``h^2 = 1``, the 6+6
    orthogonality equations and the 9 cross-product (handedness) equations."""
    return _pose_constraints_cached()


def build_pose_sdp(i: int, planes, graph: ObservationGraph) -> SdpProblem:
    """Pose-only SDP of pose ``i`` in scene units.

    The problem carries a congruence that recentres the translation entries
    (see :class:`~globalpointer.sdp.SdpProblem`), which the solver uses to
    stay accurate when the points sit far from the frame origin.
    """
    if not graph.planes_of(i):
        raise SdpError(f"pose {i} has no observations")
    A, b = pose_constraints()
    c, s, w, _ = _pose_frame(i, planes, graph)
    return SdpProblem(pose_cost(i, planes, graph), A, b, _pose_congruence(c, s, w))


def plane_cost(j: int, poses, graph: ObservationGraph) -> np.ndarray:
    D = np.zeros((4, 4))
    for i in graph.poses_of(j):
        T = poses[i].matrix()
        D += T @ graph.scatters[(i, j)].b @ T.T
    return 0.5 * (D + D.T)


_PLANE_A = np.diag([1.0, 1.0, 1.0, 0.0])[None]


def build_plane_sdp(j: int, poses, graph: ObservationGraph) -> SdpProblem:
    if not graph.poses_of(j):
        raise SdpError(f"plane {j} has no observations")
    D = plane_cost(j, poses, graph)
    w, s, _ = _plane_frame(D)
    return SdpProblem(D, _PLANE_A, np.array([1.0]), _plane_congruence(w, s))


def quat_left(p) -> np.ndarray:
    """Matrix of ``q -> p * q`` (Hamilton product)."""
    w, x, y, z = p
    return np.array([[w, -x, -y, -z],
                     [x, w, -z, y],
                     [y, z, w, -x],
                     [z, -y, x, w]])


def quat_right(p) -> np.ndarray:
    """Matrix of ``q -> q * p`` (Hamilton product)."""
    w, x, y, z = p
    return np.array([[w, -x, -y, -z],
                     [x, w, z, -y],
                     [y, -z, w, x],
                     [z, y, -x, w]])


def build_quat_cross_matrix(a, b) -> np.ndarray:
    """Symmetric ``M`` with ``q^T M q = -2 a^T R(q) b`` for every unit ``q``.

    Uses ``a^T R(q) b = <a * q, q * b>`` with ``a, b`` as pure quaternions.
    """
    pa = np.concatenate([[0.0], np.asarray(a, dtype=float)])
    pb = np.concatenate([[0.0], np.asarray(b, dtype=float)])
    S = quat_left(pa).T @ quat_right(pb)
    return -(S + S.T)


def build_rotation_only_sdp(local_normals, reference_normals, redundant: bool = True) -> SdpProblem:
    """Joint rotation / normal-sign relaxation for one frame.

    Variable blocks are ``[q, theta_1 q, ..., theta_n q]``; the cost couples
    block 0 to block j through ``M_j = build_quat_cross_matrix(ref_j, local_j)``.

    With only the unit-norm and equal-diagonal-block constraints the relaxation
    has a whole face of optimal solutions (each off-diagonal block can absorb an
    arbitrary quaternion product), so by default every off-diagonal block is
    also constrained to be symmetric, which holds for any ``theta_a theta_b q q^T``.
    """
    local_normals = [np.asarray(v, dtype=float) for v in local_normals]
    reference_normals = [np.asarray(v, dtype=float) for v in reference_normals]
    if len(local_normals) != len(reference_normals):
        raise SdpError("local and reference normal lists differ in length")
    k = len(local_normals)
    if k < 1:
        raise SdpError("need at least one normal pair")
    dim = 4 * (k + 1)
    C = np.zeros((dim, dim))
    for j, (nl, nr) in enumerate(zip(local_normals, reference_normals), start=1):
        Mj = build_quat_cross_matrix(nr, nl)
        C[0:4, 4 * j:4 * j + 4] = 0.5 * Mj
        C[4 * j:4 * j + 4, 0:4] = 0.5 * Mj.T
    A, b, keep = _rotation_constraints(k, redundant)
    problem = SdpProblem(C, A.copy(), b.copy())
    # seed the cached rank check, which only depends on the constraints
    problem.__dict__["independent"] = keep.copy()
    return problem


@lru_cache(maxsize=None)
def _rotation_constraints(k: int, redundant: bool):
    # the constraint stack depends only on the number of normals
    dim = 4 * (k + 1)
    As, bs = [], []
    A0 = np.zeros((dim, dim))
    A0[0:4, 0:4] = np.eye(4)
    As.append(A0)
    bs.append(1.0)
    for j in range(1, k + 1):
        for a in range(4):
            for b in range(a, 4):
                A = _sym_unit(dim, a, b) - _sym_unit(dim, 4 * j + a, 4 * j + b)
                As.append(A)
                bs.append(0.0)
    if redundant:
        for u in range(k + 1):
            for v in range(u + 1, k + 1):
                for a in range(4):
                    for b in range(a + 1, 4):
                        A = np.zeros((dim, dim))
                        A[4 * u + a, 4 * v + b] = A[4 * v + b, 4 * u + a] = 0.5
                        A[4 * u + b, 4 * v + a] = A[4 * v + a, 4 * u + b] = -0.5
                        As.append(A)
                        bs.append(0.0)
    A, b = np.array(As), np.array(bs)
    keep = SdpProblem(np.zeros((dim, dim)), A, b).independent
    for arr in (A, b, keep):
        arr.flags.writeable = False
    return A, b, keep


def _solution_matrix(solution) -> np.ndarray:
    return solution.x_matrix if isinstance(solution, SdpSolution) else np.asarray(solution, dtype=float)


def recover_pose(solution):
    """Round a pose-only solution to a valid pose; returns ``(pose, lam2/lam1)``."""
    X = _solution_matrix(solution)
    if X.shape != (POSE_DIM, POSE_DIM):
        raise SdpError("not a lifted pose solution")
    v, ratio = round_rank1(X)
    h = v[H_SLOT]
    if abs(h) < 1e-9:
        raise SdpError("lost homogeneous scale")
    v = v / h
    R = project_to_so3(v[:9].reshape(3, 3))
    return Pose(R, v[9:12]), ratio


def _skew(a) -> np.ndarray:
    return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])


def refine_pose(pose: Pose, cost: np.ndarray, max_steps: int = 20) -> Pose:
    """Gauss-Newton polish of a rounded pose on the lifted quadratic ``x^T C x``.

    Rotation updates are applied in the body frame, ``R <- R exp([w])``.
    A step is kept only if it lowers the objective, so the result is never
    worse than the input.
    """
    gens = [_skew(e) for e in np.eye(3)]

    def value(p):
        x = encode_pose(p)
        return float(x @ cost @ x)

    best, f = pose, value(pose)
    for _ in range(max_steps):
        R = best.rotation
        J = np.zeros((POSE_DIM, 6))
        for a in range(3):
            J[:9, a] = (R @ gens[a]).reshape(-1)
        J[9:12, 3:] = np.eye(3)
        x = encode_pose(best)
        H = J.T @ cost @ J
        g = J.T @ cost @ x
        delta = -np.linalg.lstsq(H, g, rcond=1e-12)[0]
        theta = float(np.linalg.norm(delta[:3]))
        E = axis_angle_to_rot(delta[:3], theta) if theta > 0 else np.eye(3)
        cand = Pose(project_to_so3(R @ E), best.translation + delta[3:])
        fc = value(cand)
        if not fc < f:
            break
        done = f - fc <= 1e-15 * max(f, 1.0)
        best, f = cand, fc
        if done:
            break
    return best


def recover_plane(solution):
    """Round a plane-only solution to a canonical plane; returns ``(plane, lam2/lam1)``."""
    Y = _solution_matrix(solution)
    if Y.shape != (4, 4):
        raise SdpError("not a plane solution")
    v, ratio = round_rank1(Y)
    if np.linalg.norm(v[:3]) < 1e-9:
        raise GeometryError("degenerate normal")
    return Plane.from_vector(v), ratio


def recover_signs(solution, n_i: int):
    """Read ``(q, theta)`` off a rotation-only solution."""
    Q = _solution_matrix(solution)
    if Q.shape != (4 * (n_i + 1), 4 * (n_i + 1)):
        raise SdpError("solution does not match the rotation-only block layout")
    v, _ = round_rank1(Q)
    blocks = v.reshape(n_i + 1, 4)
    b0 = blocks[0]
    ref = float(b0 @ b0)
    if ref <= 0.0:
        raise SdpError("ambiguous sign")
    dots = blocks[1:] @ b0
    if np.any(np.abs(dots) < 1e-9 * ref):
        raise SdpError("ambiguous sign")
    theta = np.where(dots > 0, 1, -1).astype(int)
    return UnitQuaternion(canonical_quat(b0 / np.sqrt(ref))), theta


# -- conditioned sub-problems -------------------------------------------------
#
# The pose-only and plane-only costs inherit the units of the scene, so their
# smallest nonzero eigenvalues can sit many orders of magnitude below their
# norm. Solving in normalized coordinates (local points centred and scaled,
# world origin moved near the observed planes) is a linear change of the
# translation / offset entries only: constraints are untouched, the feasible
# set maps one-to-one and the objective changes by a constant factor.


def _scatter_like(B: np.ndarray, count: int) -> ScatterMatrix:
    return ScatterMatrix(0.5 * (B + B.T), count)


def _centering(B: np.ndarray, shift: np.ndarray, scale: float) -> np.ndarray:
    S = np.eye(4)
    S[:3, :3] /= scale
    S[:3, 3] = -shift / scale
    return S @ B @ S.T


def _pose_frame(i: int, planes, graph: ObservationGraph):
    """Centroid ``c`` and spread ``s`` of frame ``i``'s points, plus a world
    origin ``w`` near the observed planes (weighted least squares)."""
    js = graph.planes_of(i)
    total = np.zeros((4, 4))
    for j in js:
        total += graph.scatters[(i, j)].b
    count = total[3, 3]
    c = total[:3, 3] / count
    spread = np.trace(total[:3, :3]) / count - c @ c
    s = float(np.sqrt(max(spread, 0.0))) or 1.0
    N = np.array([planes[j].normal for j in js])
    dvec = np.array([planes[j].d for j in js])
    w_cnt = np.array([graph.scatters[(i, j)].count for j in js], dtype=float)
    G = (N * w_cnt[:, None]).T @ N
    w = np.linalg.lstsq(G, -(N * w_cnt[:, None]).T @ dvec, rcond=None)[0]
    return c, s, w, count


def _pose_congruence(c, s, w) -> np.ndarray:
    # x = S xh with t = s th - R c + w h; rotation and h entries unchanged
    S = np.eye(POSE_DIM)
    for k in range(3):
        S[_t(k), _t(k)] = s
        for a in range(3):
            S[_t(k), _r(k, a)] = -c[a]
        S[_t(k), H_SLOT] = w[k]
    return S


def _plane_frame(D: np.ndarray):
    count = D[3, 3]
    w = D[:3, 3] / count
    spread = np.trace(D[:3, :3]) / count - w @ w
    return w, float(np.sqrt(max(spread, 0.0))) or 1.0, count


def _plane_congruence(w, s) -> np.ndarray:
    # [n; d] = S [n; dh] with d = s dh - n.w
    S = np.eye(4)
    S[3, 3] = s
    S[3, :3] = -w
    return S


def normalized_pose_problem(i: int, planes, graph: ObservationGraph):
    """Pose-only SDP for pose ``i`` in normalized coordinates.

    Returns ``(problem, unmap)`` where ``unmap(pose_hat)`` converts a pose of
    the normalized problem back to scene units.
    """
    js = graph.planes_of(i)
    if not js:
        raise SdpError(f"pose {i} has no observations")
    c, s, w, count = _pose_frame(i, planes, graph)
    scatters = {(0, k): _scatter_like(_centering(graph.scatters[(i, j)].b, c, s), graph.scatters[(i, j)].count)
                for k, j in enumerate(js)}
    sub = ObservationGraph(1, len(js), scatters)
    planes_hat = [Plane(planes[j].normal, (planes[j].d + planes[j].normal @ w) / s) for j in js]
    A, b = pose_constraints()
    # per-point cost keeps the objective O(1) whatever the point count
    problem = SdpProblem(pose_cost(0, planes_hat, sub) / count, A, b)

    def unmap(pose_hat: Pose) -> Pose:
        R = pose_hat.rotation
        return Pose(R, s * pose_hat.translation + w - R @ c)

    return problem, unmap


def normalized_plane_problem(j: int, poses, graph: ObservationGraph):
    """Plane-only SDP for plane ``j`` in normalized world coordinates.

    Returns ``(problem, unmap)`` with ``unmap(plane_hat)`` in scene units.
    """
    D = plane_cost(j, poses, graph)
    if D[3, 3] <= 0:
        raise SdpError(f"plane {j} has no observations")
    w, s, count = _plane_frame(D)
    D_hat = _centering(D, w, s)
    problem = SdpProblem(0.5 * (D_hat + D_hat.T) / count, _PLANE_A, np.array([1.0]))

    def unmap(plane_hat: Plane) -> Plane:
        n = plane_hat.normal
        return Plane(n, s * plane_hat.d - n @ w).canonical()

    return problem, unmap
