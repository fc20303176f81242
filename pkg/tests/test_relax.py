import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from globalpointer.geometry import (
    ObservationGraph,
    Plane,
    Pose,
    UnitQuaternion,
    accumulate_scatter,
    plane_objective,
    pose_objective,
    quat_to_rot,
    random_rotation,
)
from globalpointer.relax import (
    H_SLOT,
    build_plane_sdp,
    build_pose_sdp,
    build_quat_cross_matrix,
    build_rotation_only_sdp,
    encode_plane,
    encode_pose,
    encode_rotation,
    normalized_plane_problem,
    normalized_pose_problem,
    pose_constraints,
    recover_plane,
    recover_pose,
    recover_signs,
    refine_pose,
)
from globalpointer.sdp import DependentConstraintsWarning, SdpError, certify, solve_sdp

from conftest import random_plane, random_pose

seeds = st.integers(0, 2**32 - 1)

# Independent oracle values for the noisy scene SceneSpec(5, 6, sigma_p=0.05, seed=11):
# the pose value is the best of 30 BFGS runs over (rotation vector, translation)
# and the plane value is CVXOPT's optimum of the same plane-only SDP.
POSE0_OPTIMUM = 1.4916664760003804
PLANE0_OPTIMUM = 1.0966164047


def _solve(problem):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DependentConstraintsWarning)
        return solve_sdp(problem)


def _random_graph(rng, k_planes=4, pts=30):
    points = {(0, j): rng.uniform(-10, 10, (pts, 3)) for j in range(k_planes)}
    return ObservationGraph.from_points(1, k_planes, points)


# -- quaternion cross matrix ---------------------------------------------------

def test_cross_matrix_identity_case():
    M = build_quat_cross_matrix([1, 0, 0], [1, 0, 0])
    q = np.array([1.0, 0, 0, 0])
    assert q @ M @ q == pytest.approx(-2.0)
    assert -(q @ M @ q) == pytest.approx(2.0)


@given(seeds)
def test_cross_matrix_identity(seed):
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    a, b = rng.standard_normal(3), rng.standard_normal(3)
    M = build_quat_cross_matrix(a, b)
    assert np.array_equal(M, M.T)
    scale = 1.0 + np.linalg.norm(a) * np.linalg.norm(b)
    assert abs(q @ M @ q + 2 * a @ quat_to_rot(q) @ b) <= 1e-12 * scale


# -- pose-only relaxation ------------------------------------------------------

@settings(max_examples=100)
@given(seeds)
def test_pose_cost_reproduces_objective(seed):
    rng = np.random.default_rng(seed)
    graph = _random_graph(rng)
    planes = [random_plane(rng) for _ in range(4)]
    pose = random_pose(rng)
    problem = build_pose_sdp(0, planes, graph)
    x = encode_pose(pose)
    direct = pose_objective(0, pose, planes, graph)
    assert abs(x @ problem.cost @ x - direct) <= 1e-9 * (1.0 + direct)


@given(seeds)
def test_encoded_pose_satisfies_constraints(seed):
    x = encode_pose(random_pose(np.random.default_rng(seed), 50.0))
    A, b = pose_constraints()
    assert A.shape[0] == 22
    res = np.einsum("kij,i,j->k", A, x, x) - b
    assert np.max(np.abs(res)) < 1e-10


def test_pose_cost_zero_for_consistent_identity():
    rng = np.random.default_rng(0)
    P = np.column_stack([rng.uniform(-5, 5, (20, 2)), np.zeros(20)])
    graph = ObservationGraph.from_points(1, 1, {(0, 0): P})
    problem = build_pose_sdp(0, [Plane([0, 0, 1], 0.0)], graph)
    x = encode_pose(Pose.identity())
    assert abs(x @ problem.cost @ x) < 1e-12


def test_pose_sdp_requires_observations():
    graph = ObservationGraph.from_points(2, 1, {(0, 0): [[0, 0, 0]]})
    with pytest.raises(SdpError):
        build_pose_sdp(1, [Plane([0, 0, 1], 0.0)], graph)


def test_noise_free_pose_solve(clean_scene):
    for i in range(clean_scene.m):
        problem = build_pose_sdp(i, clean_scene.planes, clean_scene.graph)
        sol = _solve(problem)
        assert sol.optimal and sol.rel_gap < 1e-8
        assert certify(problem, sol).corank1
        pose, ratio = recover_pose(sol)
        gt = clean_scene.poses[i]
        assert ratio < 1e-6
        assert np.linalg.norm(pose.rotation - gt.rotation) < 1e-6
        assert np.max(np.abs(pose.translation - gt.translation)) < 1e-6


def test_noisy_pose_matches_oracle(noisy_scene):
    problem, unmap = normalized_pose_problem(0, noisy_scene.planes, noisy_scene.graph)
    sol = _solve(problem)
    pose_hat, _ = recover_pose(sol)
    pose = unmap(refine_pose(pose_hat, problem.cost))
    val = pose_objective(0, pose, noisy_scene.planes, noisy_scene.graph)
    assert val == pytest.approx(POSE0_OPTIMUM, rel=1e-8)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_refine_pose_never_increases(seed):
    rng = np.random.default_rng(seed)
    graph = _random_graph(rng)
    planes = [random_plane(rng) for _ in range(4)]
    cost = build_pose_sdp(0, planes, graph).cost
    start = random_pose(rng)
    out = refine_pose(start, cost)
    x0, x1 = encode_pose(start), encode_pose(out)
    assert x1 @ cost @ x1 <= x0 @ cost @ x0
    assert out.is_valid()


# -- plane-only relaxation -----------------------------------------------------

def test_plane_sdp_exact_plane():
    rng = np.random.default_rng(1)
    P = np.column_stack([rng.uniform(-5, 5, (30, 2)), np.ones(30)])
    graph = ObservationGraph.from_points(1, 1, {(0, 0): P})
    problem = build_plane_sdp(0, [Pose.identity()], graph)
    sol = solve_sdp(problem)
    assert sol.primal_objective == pytest.approx(0.0, abs=1e-8)
    plane, _ = recover_plane(sol)
    assert np.allclose(plane.vector(), [0, 0, 1, -1], atol=1e-8)


def test_noise_free_plane_solve(clean_scene):
    for j in range(clean_scene.n):
        sol = solve_sdp(build_plane_sdp(j, clean_scene.poses, clean_scene.graph))
        plane, ratio = recover_plane(sol)
        assert sol.optimal and ratio < 1e-6
        assert np.max(np.abs(plane.vector() - clean_scene.planes[j].vector())) < 1e-8


def _schur_oracle(D):
    """min over unit n, free d of [n; d]^T D [n; d] via the Schur complement."""
    S = D[:3, :3] - np.outer(D[:3, 3], D[3, :3]) / D[3, 3]
    lam, V = np.linalg.eigh(S)
    n = V[:, 0]
    return lam[0], Plane.from_vector(np.append(n, -D[3, :3] @ n / D[3, 3]))


def test_plane_sdp_matches_schur_oracle(rng):
    Q = np.linalg.qr(rng.standard_normal((4, 4)))[0]
    D = Q @ np.diag([0.5, 1.0, 2.0, 4.0]) @ Q.T
    graph = ObservationGraph(1, 1, {(0, 0): accumulate_scatter([[0, 0, 0]])})
    from globalpointer.sdp import SdpProblem
    problem = build_plane_sdp(0, [Pose.identity()], graph)
    problem = SdpProblem(D, problem.A, problem.b)
    sol = solve_sdp(problem)
    val, plane = _schur_oracle(D)
    assert sol.primal_objective == pytest.approx(val, abs=1e-8)
    assert np.allclose(recover_plane(sol)[0].vector(), plane.vector(), atol=1e-8)


def test_noisy_plane_matches_oracle(noisy_scene):
    problem = build_plane_sdp(0, noisy_scene.poses, noisy_scene.graph)
    sol = solve_sdp(problem)
    plane, _ = recover_plane(sol)
    assert plane_objective(0, plane, noisy_scene.poses, noisy_scene.graph) == pytest.approx(PLANE0_OPTIMUM, rel=1e-8)
    val, _ = _schur_oracle(problem.cost)
    assert val == pytest.approx(PLANE0_OPTIMUM, rel=1e-8)


@given(seeds)
def test_plane_encode_feasible(seed):
    rng = np.random.default_rng(seed)
    graph = ObservationGraph.from_points(2, 1, {(0, 0): rng.uniform(-5, 5, (10, 3)),
                                                (1, 0): rng.uniform(-5, 5, (10, 3))})
    poses = [random_pose(rng), random_pose(rng)]
    plane = random_plane(rng)
    problem = build_plane_sdp(0, poses, graph)
    b = encode_plane(plane)
    Y = np.outer(b, b)
    assert np.max(np.abs(problem.residuals(Y))) < 1e-10
    direct = plane_objective(0, plane, poses, graph)
    assert abs(problem.objective(Y) - direct) <= 1e-9 * (1 + direct)


def test_normalized_problems_solve_to_the_same_estimates(clean_scene):
    problem, unmap = normalized_pose_problem(2, clean_scene.planes, clean_scene.graph)
    pose = unmap(recover_pose(_solve(problem))[0])
    gt = clean_scene.poses[2]
    assert np.linalg.norm(pose.rotation - gt.rotation) < 1e-6
    assert np.max(np.abs(pose.translation - gt.translation)) < 1e-6
    problem, unmap = normalized_plane_problem(1, clean_scene.poses, clean_scene.graph)
    plane = unmap(recover_plane(solve_sdp(problem))[0])
    assert np.max(np.abs(plane.vector() - clean_scene.planes[1].vector())) < 1e-8


# -- rotation-only relaxation --------------------------------------------------

def _encoded_rotation_matrix(q, theta):
    v = encode_rotation(q, theta)
    return np.outer(v, v)


@given(seeds, st.integers(1, 6))
def test_rotation_only_feasibility(seed, k):
    rng = np.random.default_rng(seed)
    q = UnitQuaternion(rng.standard_normal(4)).wxyz
    theta = rng.choice([-1, 1], size=k)
    L = [rng.standard_normal(3) for _ in range(k)]
    problem = build_rotation_only_sdp(L, L)
    Q = _encoded_rotation_matrix(q, theta)
    assert np.max(np.abs(problem.residuals(Q))) < 1e-12
    R = quat_to_rot(q)
    expected = sum(-2 * t * r @ R @ l for t, r, l in zip(theta, L, L))
    assert problem.objective(Q) == pytest.approx(expected, abs=1e-10)


def test_rotation_only_single_normal():
    z = np.array([0.0, 0.0, 1.0])
    sol = _solve(build_rotation_only_sdp([z], [z]))
    assert sol.primal_objective == pytest.approx(-2.0, abs=1e-7)
    # one normal leaves a whole family of optima (any turn about z with
    # theta = +1, or a half turn taking z to -z with theta = -1); the rounded
    # pair must be one of them
    q, theta = recover_signs(sol, 1)
    assert theta[0] * z @ q.rotation() @ z == pytest.approx(1.0, abs=1e-6)


def _brute_force_signs(local, ref):
    best, arg = np.inf, None
    for s in itertools.product([1, -1], repeat=len(local)):
        s = np.array(s)
        B = (ref * s[:, None]).T @ local
        U, _, Vt = np.linalg.svd(B)
        R = U @ np.diag([1, 1, np.linalg.det(U @ Vt)]) @ Vt
        val = -2 * np.sum(np.einsum("ij,ij->i", ref * s[:, None], local @ R.T))
        if val < best - 1e-12:
            best, arg = val, (s, R)
    return best, arg


def _flip_instance(seed, k):
    rng = np.random.default_rng(seed)
    R = random_rotation(rng)
    L = rng.standard_normal((k, 3))
    L /= np.linalg.norm(L, axis=1)[:, None]
    theta = rng.choice([-1, 1], size=k)
    return R, L, theta, (L @ R.T) * theta[:, None]


@pytest.mark.parametrize("seed", range(5))
def test_rotation_only_matches_brute_force(seed):
    R, L, theta, ref = _flip_instance(seed, 3 + seed)
    sol = _solve(build_rotation_only_sdp(list(L), list(ref)))
    q, th = recover_signs(sol, len(L))
    best, (s, Rb) = _brute_force_signs(L, ref)
    assert np.array_equal(th, s) and np.array_equal(th, theta)
    assert np.allclose(q.rotation(), R, atol=1e-6)
    assert sol.primal_objective == pytest.approx(best, abs=1e-7)


def test_rotation_only_noisy_oracle():
    rng = np.random.default_rng(5)
    R = random_rotation(rng)
    L = rng.standard_normal((6, 3))
    L /= np.linalg.norm(L, axis=1)[:, None]
    th = np.array([1, -1, 1, 1, -1, -1])
    ref = (L @ R.T) * th[:, None] + 0.05 * rng.standard_normal((6, 3))
    ref /= np.linalg.norm(ref, axis=1)[:, None]
    sol = _solve(build_rotation_only_sdp(list(L), list(ref)))
    best, (s, _) = _brute_force_signs(L, ref)
    assert sol.primal_objective == pytest.approx(best, rel=1e-8)
    assert np.array_equal(recover_signs(sol, 6)[1], s)


def test_rotation_only_reference_negation_flips_all_signs():
    R, L, theta, ref = _flip_instance(9, 5)
    q1, t1 = recover_signs(_solve(build_rotation_only_sdp(list(L), list(ref))), 5)
    q2, t2 = recover_signs(_solve(build_rotation_only_sdp(list(L), list(-ref))), 5)
    assert np.array_equal(t1, -t2)
    assert np.allclose(q1.wxyz, q2.wxyz, atol=1e-6)


def test_rotation_only_length_mismatch():
    with pytest.raises(SdpError):
        build_rotation_only_sdp([[0, 0, 1]], [])


# -- recovery ------------------------------------------------------------------

@given(seeds)
def test_recover_pose_roundtrip(seed):
    pose = random_pose(np.random.default_rng(seed))
    x = encode_pose(pose)
    out, ratio = recover_pose(np.outer(x, x))
    assert np.max(np.abs(out.rotation - pose.rotation)) < 1e-12
    assert np.max(np.abs(out.translation - pose.translation)) < 1e-12 * 10
    assert ratio < 1e-12


def test_recover_pose_perturbed(rng):
    pose = random_pose(rng)
    x = encode_pose(pose)
    G = rng.standard_normal((13, 13))
    out, ratio = recover_pose(np.outer(x, x) + 1e-8 * G @ G.T)
    assert np.linalg.norm(out.rotation - pose.rotation) < 1e-4
    assert np.max(np.abs(out.translation - pose.translation)) < 1e-4
    assert ratio < 1e-6


def test_recover_pose_lost_scale():
    x = np.zeros(13)
    x[:9] = np.eye(3).reshape(-1)
    with pytest.raises(SdpError, match="lost homogeneous scale"):
        recover_pose(np.outer(x, x))


def test_recover_plane_examples():
    b = np.array([0, 0, 1, -2.0])
    plane, ratio = recover_plane(np.outer(b, b))
    assert np.allclose(plane.vector(), b) and ratio == 0.0
    first, q1 = recover_plane(np.eye(4))
    second, q2 = recover_plane(np.eye(4))
    assert q1 == q2 == 1.0 and np.array_equal(first.vector(), second.vector())
    with pytest.raises(Exception, match="degenerate normal"):
        recover_plane(np.diag([0, 0, 0, 1.0]))


def test_recover_signs_roundtrip():
    q = UnitQuaternion([0.3, -0.2, 0.9, 0.1]).wxyz
    theta = np.array([1, -1])
    v = encode_rotation(q, theta)
    out_q, out_t = recover_signs(np.outer(v, v), 2)
    assert np.allclose(out_q.wxyz, q, atol=1e-12) and list(out_t) == [1, -1]
    neg_q, neg_t = recover_signs(np.outer(-v, -v), 2)
    assert np.array_equal(neg_q.wxyz, out_q.wxyz) and np.array_equal(neg_t, out_t)


def test_recover_signs_ambiguous():
    v = np.zeros(8)
    v[0] = 1.0
    v[5] = 1.0
    with pytest.raises(SdpError, match="ambiguous sign"):
        recover_signs(np.outer(v, v), 1)


def test_h_slot_is_last():
    assert H_SLOT == 12
