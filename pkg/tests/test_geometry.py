import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from globalpointer.geometry import (
    GeometryError,
    ObservationGraph,
    Plane,
    Pose,
    ScatterMatrix,
    UnitQuaternion,
    accumulate_scatter,
    axis_angle_to_rot,
    per_point_objective,
    plane_to_plane_sq,
    point_to_plane_sq,
    project_to_so3,
    quat_to_rot,
    random_rotation,
    rot_to_quat,
    total_objective,
    transform_point,
)

from conftest import random_plane, random_pose

seeds = st.integers(0, 2**32 - 1)


def test_transform_identity():
    assert np.allclose(transform_point(Pose.identity(), [1, 2, 3]), [1, 2, 3])


def test_transform_quarter_turn():
    pose = Pose(axis_angle_to_rot([0, 0, 1], np.pi / 2), [1, 0, 0])
    assert np.allclose(transform_point(pose, [1, 0, 0]), [1, 1, 0], atol=1e-15)


@given(seeds)
def test_transform_inverse_roundtrip(seed):
    rng = np.random.default_rng(seed)
    pose = random_pose(rng)
    p = rng.uniform(-20, 20, 3)
    back = transform_point(pose.inverse(), transform_point(pose, p))
    assert np.max(np.abs(back - p)) < 1e-12


def test_point_to_plane_examples():
    assert point_to_plane_sq(Plane([0, 0, 1], 0.0), [1, 2, 3]) == 9.0
    assert point_to_plane_sq(Plane([0, 0, 1], -3.0), [1, 2, 3]) == 0.0


@given(seeds)
def test_point_to_plane_formula(seed):
    rng = np.random.default_rng(seed)
    plane, p = random_plane(rng), rng.uniform(-20, 20, 3)
    ref = (sum(plane.normal[k] * p[k] for k in range(3)) + plane.d) ** 2
    assert abs(point_to_plane_sq(plane, p) - ref) <= 1e-12 * max(1.0, ref)


def test_plane_to_plane_examples():
    pl = Plane([0, 0, 1], 1.0)
    assert plane_to_plane_sq(Pose.identity(), pl, pl) == 0.0
    assert plane_to_plane_sq(Pose.identity(), pl.flipped(), pl) == pytest.approx(8.0)


@given(seeds)
def test_plane_to_plane_matches_transformed_plane(seed):
    rng = np.random.default_rng(seed)
    pose, local, glob = random_pose(rng), random_plane(rng), random_plane(rng)
    moved = local.transformed(pose)
    ref = np.sum((moved.normal - glob.normal) ** 2) + (moved.d - glob.d) ** 2
    assert abs(plane_to_plane_sq(pose, local, glob) - ref) <= 1e-12 * max(1.0, ref)


def test_scatter_examples():
    s = accumulate_scatter([[0, 0, 0]])
    assert s.b[3, 3] == 1 and np.count_nonzero(s.b) == 1
    s = accumulate_scatter([[1, 0, 0], [-1, 0, 0]])
    assert s.b[0, 0] == 2 and s.b[3, 3] == 2 and s.b[0, 3] == 0
    with pytest.raises(GeometryError, match="empty observation"):
        accumulate_scatter(np.zeros((0, 3)))


@given(seeds, st.integers(1, 60))
def test_scatter_invariants(seed, k):
    rng = np.random.default_rng(seed)
    s = accumulate_scatter(rng.uniform(-30, 30, (k, 3)))
    assert np.max(np.abs(s.b - s.b.T)) <= 1e-12
    assert np.linalg.eigvalsh(s.b)[0] >= -1e-9 * np.trace(s.b)
    assert s.b[3, 3] == k and s.count == k


@settings(max_examples=200)
@given(seeds)
def test_scatter_quadratic_form_equals_point_sum(seed):
    rng = np.random.default_rng(seed)
    P = rng.uniform(-10, 10, (50, 3))
    pose, plane = random_pose(rng), random_plane(rng)
    s = accumulate_scatter(P)
    T, b = pose.matrix(), plane.vector()
    quad = b @ T @ s.b @ T.T @ b
    direct = sum(point_to_plane_sq(plane, transform_point(pose, p)) for p in P)
    assert abs(quad - direct) <= 1e-9 * (1.0 + direct)


def test_total_objective_single_point():
    g = ObservationGraph.from_points(1, 1, {(0, 0): [[0, 0, 3]]})
    assert total_objective([Pose.identity()], [Plane([0, 0, 1], 0.0)], g) == pytest.approx(9.0)


def test_total_objective_zero_on_clean_scene(clean_scene):
    val = total_objective(clean_scene.poses, clean_scene.planes, clean_scene.graph)
    assert val <= 1e-18 * clean_scene.graph.point_count() * 25.0 ** 2 * 1e6


def test_total_objective_matches_per_point(noisy_scene, rng):
    poses = [random_pose(rng) for _ in range(noisy_scene.m)]
    planes = [random_plane(rng) for _ in range(noisy_scene.n)]
    for ps, pl in ((noisy_scene.poses, noisy_scene.planes), (poses, planes)):
        a = total_objective(ps, pl, noisy_scene.graph)
        b = per_point_objective(ps, pl, noisy_scene.graph)
        assert abs(a - b) <= 1e-9 * b


def test_project_to_so3_examples(rng):
    R = random_rotation(rng)
    assert np.max(np.abs(project_to_so3(R) - R)) < 1e-12
    assert np.allclose(project_to_so3(1.5 * np.eye(3)), np.eye(3), atol=1e-15)
    with pytest.raises(GeometryError, match="degenerate rotation estimate"):
        project_to_so3(np.diag([1.0, 1.0, 0.0]))


def test_project_to_so3_beats_random_search(rng):
    M = random_rotation(rng) + 0.2 * rng.standard_normal((3, 3))
    best = np.linalg.norm(project_to_so3(M) - M)
    others = [np.linalg.norm(random_rotation(rng) - M) for _ in range(1000)]
    assert best <= min(others)


def test_quaternion_examples():
    assert np.allclose(quat_to_rot([1, 0, 0, 0]), np.eye(3))
    c = np.cos(np.pi / 4)
    assert np.allclose(quat_to_rot([c, 0, 0, c]), axis_angle_to_rot([0, 0, 1], np.pi / 2), atol=1e-15)


@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_quaternion_roundtrip(v):
    q = UnitQuaternion(v)
    assert abs(np.linalg.norm(q.wxyz) - 1) < 1e-12
    assert q.wxyz[0] >= 0
    back = rot_to_quat(q.rotation())
    err = np.max(np.abs(back - q.wxyz))
    if q.wxyz[0] < 1e-12:
        # half turns: q and -q are both canonical up to roundoff
        err = min(err, np.max(np.abs(back + q.wxyz)))
    assert err < 1e-12


@given(seeds)
def test_pose_rotation_invariants(seed):
    pose = random_pose(np.random.default_rng(seed))
    assert pose.is_valid()


@given(seeds)
def test_plane_canonical_idempotent_and_residual_preserving(seed):
    rng = np.random.default_rng(seed)
    n = rng.standard_normal(3)
    pl = Plane(n / np.linalg.norm(n), rng.uniform(-5, 5))
    c = pl.canonical()
    assert np.array_equal(c.canonical().normal, c.normal) and c.canonical().d == c.d
    assert c.d <= 0
    assert abs(np.linalg.norm(c.normal) - 1) < 1e-12
    p = rng.uniform(-20, 20, 3)
    assert abs(point_to_plane_sq(c, p) - point_to_plane_sq(pl, p)) <= 1e-12 * max(1.0, point_to_plane_sq(pl, p))


def test_plane_canonical_tie_break():
    assert Plane([-1.0, 0, 0], 0.0).canonical().normal[0] == 1.0
    assert Plane([0.0, 0, 1], 2.0).canonical().d == -2.0


def test_scatter_from_matrix_only():
    P = np.array([[1.0, 2, 3], [4, 5, 6], [0, 1, 0]])
    full = accumulate_scatter(P)
    bare = ScatterMatrix(full.b, 3)
    assert np.allclose(bare.centroid, full.centroid)
    assert np.allclose(bare.cov, full.cov, atol=1e-12)


def test_graph_rejects_out_of_range():
    with pytest.raises(GeometryError):
        ObservationGraph.from_points(1, 1, {(0, 3): [[0, 0, 0]]})


def test_graph_well_posedness(clean_scene):
    normals = [p.normal for p in clean_scene.planes]
    assert clean_scene.graph.is_well_posed(normals)
    g = ObservationGraph.from_points(1, 4, {(0, j): [[j, 0, 0]] for j in range(4)})
    assert not g.is_determinable(0, [[1, 0, 0]] * 4)
    assert g.degenerate_pairs() == g.edges
