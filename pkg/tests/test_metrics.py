import numpy as np
import pytest

from globalpointer.geometry import Plane, Pose, axis_angle_to_rot, total_objective
from globalpointer.metrics import compute_metrics, gauge_align, rotation_error_sq

from conftest import random_pose


def test_identical_estimates_score_zero(noisy_scene):
    met = compute_metrics(noisy_scene.poses, noisy_scene.planes, noisy_scene.poses, noisy_scene.planes,
                          noisy_scene.graph)
    for name in ("e_t", "e_n", "e_d"):
        assert np.all(getattr(met, name) == 0)
    # arccos near 1 resolves angles only to ~1e-8 rad
    assert np.all(met.e_R < 1e-15)
    assert met.e_total == total_objective(noisy_scene.poses, noisy_scene.planes, noisy_scene.graph)


def test_gauge_alignment_removes_rigid_motion(clean_scene, rng):
    G = random_pose(rng)
    poses = [G.compose(p) for p in clean_scene.poses]
    planes = [pl.transformed(G) for pl in clean_scene.planes]
    poses, planes = gauge_align(poses, planes, clean_scene.poses)
    met = compute_metrics(poses, planes, clean_scene.poses, clean_scene.planes, clean_scene.graph)
    for name in ("e_R", "e_t", "e_n", "e_d"):
        assert met.aggregates[name]["max"] < 1e-18 * 1e8


def test_gauge_alignment_identity(noisy_scene):
    poses, planes = gauge_align(noisy_scene.poses, noisy_scene.planes, noisy_scene.poses)
    for p, q in zip(poses, noisy_scene.poses):
        assert np.allclose(p.matrix(), q.matrix(), atol=1e-14)


def test_gauge_alignment_preserves_objective(noisy_scene, rng):
    poses = [random_pose(rng) for _ in noisy_scene.poses]
    planes = list(noisy_scene.planes)
    before = total_objective(poses, planes, noisy_scene.graph)
    after = total_objective(*gauge_align(poses, planes, noisy_scene.poses), noisy_scene.graph)
    assert after == pytest.approx(before, rel=1e-12)


def test_rotation_error_is_angle_squared():
    theta = 0.7
    val, excess = rotation_error_sq(axis_angle_to_rot([0, 0, 1], theta), np.eye(3))
    assert val == pytest.approx(theta ** 2, rel=1e-12) and excess == 0.0


def test_normal_error_uses_absolute_values():
    gt = [Plane([0, 0, 1], -2.0)]
    met = compute_metrics([Pose.identity()], [Plane([0, 0, -1], 2.0)], [Pose.identity()], gt)
    assert met.e_n[0] == 0.0 and met.e_d[0] == 0.0


def test_clamped_arccos_is_reported(caplog):
    R = np.eye(3) * (1 + 1e-8)
    val, excess = rotation_error_sq(R, np.eye(3))
    assert val == 0.0 and excess > 1e-9
    with caplog.at_level("WARNING"):
        compute_metrics([Pose(R, np.zeros(3))], [], [Pose.identity()], [])
    assert "outside [-1, 1]" in caplog.text


def test_metrics_are_nonnegative_and_aggregated(noisy_scene, rng):
    poses = [random_pose(rng) for _ in noisy_scene.poses]
    met = compute_metrics(poses, noisy_scene.planes, noisy_scene.poses, noisy_scene.planes, noisy_scene.graph)
    for name in ("e_R", "e_t", "e_n", "e_d"):
        v = getattr(met, name)
        assert np.all(v >= 0)
        assert met.aggregates[name]["median"] == pytest.approx(np.median(v))
    d = met.to_dict()
    assert set(d) == {"e_total", "clamp_excess", "aggregates", "per_pose", "per_plane"}


def test_size_mismatch():
    with pytest.raises(ValueError):
        compute_metrics([Pose.identity()], [], [], [])
    with pytest.raises(ValueError):
        gauge_align([], [], [])
