import numpy as np
import pytest

from globalpointer.geometry import Plane, Pose, random_rotation
from globalpointer.scene import SceneSpec, generate_scene


def random_pose(rng, scale=10.0):
    return Pose(random_rotation(rng), rng.uniform(-scale, scale, 3))


def random_plane(rng, scale=10.0):
    n = rng.standard_normal(3)
    return Plane(n / np.linalg.norm(n), rng.uniform(-scale, scale)).canonical()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def clean_scene():
    return generate_scene(SceneSpec(6, 8, seed=3))


@pytest.fixture(scope="session")
def noisy_scene():
    return generate_scene(SceneSpec(5, 6, sigma_p=0.05, seed=11))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        passed, detail = mod.RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
