import pytest
import numpy as np

from blursplat.dataset import SceneConfig, generate_dataset, load_dataset
from blursplat.liegroup import SE3Pose, se3_exp
from blursplat.renderer import RenderSettings
from blursplat.scene import Camera, SceneModel, logit
from blursplat.trajectory import BezierTrajectory


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="Run slow end-to-end experiments."
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end experiment, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_camera():
    """16x16 pinhole camera with pixel centres at integer coordinates."""
    return Camera(20.0, 20.0, 7.5, 7.5, 16, 16)


@pytest.fixture
def exact_settings():
    """Renderer settings without support truncation or early termination (smooth in every parameter)."""
    return RenderSettings(support_sigma=None, min_transmittance=0.0)


@pytest.fixture
def make_scene():
    """Factory for seeded random scenes in front of an identity camera."""

    def make(count=20, seed=0, opacity=(0.3, 0.8), capacity=None):
        r = np.random.default_rng(seed)
        means = np.column_stack([
            r.uniform(-0.8, 0.8, count),
            r.uniform(-0.8, 0.8, count),
            r.uniform(3.0, 5.0, count),
        ])
        quats = r.normal(size=(count, 4))
        quats /= np.linalg.norm(quats, axis=1, keepdims=True)
        log_scales = np.log(r.uniform(0.15, 0.4, size=(count, 3)))
        opacities = r.uniform(opacity[0], opacity[1], count)
        colors = r.uniform(0.1, 0.9, size=(count, 3))
        return SceneModel(means, quats, log_scales, logit(opacities), colors, capacity=capacity or count)

    return make


@pytest.fixture
def small_scene(make_scene):
    return make_scene()


@pytest.fixture
def motion():
    """Short three-point Bézier motion around the identity pose."""
    points = (
        se3_exp([-0.04, 0.02, 0.0, 0.0, -0.01, 0.01]),
        se3_exp([0.01, -0.01, 0.02, 0.01, 0.0, 0.0]),
        se3_exp([0.05, 0.01, -0.01, 0.0, 0.015, -0.005]),
    )
    return BezierTrajectory(points, 1.0)


@pytest.fixture
def identity_pose():
    return SE3Pose.identity()


@pytest.fixture(scope="session")
def toy_scene_config():
    return SceneConfig(gaussians=40, width=24, height=24, focal=24.0, views=3, test_views=2)


@pytest.fixture(scope="session")
def toy_dataset_dir(tmp_path_factory, toy_scene_config):
    destination = tmp_path_factory.mktemp("data") / "toy"
    generate_dataset(destination, toy_scene_config, blur_levels=(1, 3, 5), burst_size=5, seed=3)
    return destination


@pytest.fixture(scope="session")
def toy_dataset_no_events_dir(tmp_path_factory, toy_scene_config):
    destination = tmp_path_factory.mktemp("data") / "toy_no_events"
    generate_dataset(destination, toy_scene_config, blur_levels=(1, 3), burst_size=5, events=False, seed=3)
    return destination


@pytest.fixture
def toy_dataset(toy_dataset_dir):
    return load_dataset(toy_dataset_dir)
