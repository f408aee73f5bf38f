"""
Procedural toy datasets: generation and loading.

A dataset folder holds ``camera.cfg`` (see :class:`DatasetSettings`), the
ground-truth scene, per-view sharp bursts, blur-level images built by
averaging the first ``k`` frames of each burst, novel test views, the
ground-truth trajectory sampled at every burst frame and, optionally, the
event stream of all bursts.
"""

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from tqdm import tqdm

from .dataset_settings import DatasetSettings
from .eventsim import average_frames, concatenate_streams, generate_events, synthesize_burst
from .formats.events_file import read_events, write_events
from .formats.images import read_image, write_image
from .formats.scene_file import load_scene, save_scene
from .formats.tum import read_tum, write_tum
from .liegroup import SE3Pose, Twist, random_rotation, se3_exp
from .renderer import ImageRole, RenderSettings, render
from .scene import Camera, SceneModel, logit, rotation_to_quaternion
from .trajectory import BezierTrajectory, virtual_parameters


class DatasetError(Exception):
    """Raised when a dataset lacks what a command needs or is inconsistent."""
    pass


@dataclass
class SceneConfig:
    gaussians: int = 200
    half_size: float = 1.0
    scale_min: float = 0.05
    scale_max: float = 0.2
    opacity_min: float = 0.5
    opacity_max: float = 0.95
    color_seed: int = 0
    width: int = 64
    height: int = 64
    focal: float = 60.0
    views: int = 20
    test_views: int = 4
    orbit_radius: float = 4.0
    orbit_height: float = 0.5
    # total orbit arc in degrees; kept well below 180 so no pose nears a half turn
    orbit_arc: float = 90.0
    motion: float = 0.6
    motion_rotation: float = 6.0
    gt_control_points: int = 4

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ValueError(f"Unknown scene keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path):
        """Reads the ``[scene]`` table of a TOML config; missing table gives defaults."""
        with open(path, "rb") as f:
            return cls.from_dict(tomllib.load(f).get("scene", {}))

    def to_dict(self):
        return asdict(self)

    def camera(self):
        return Camera(self.focal, self.focal, (self.width - 1) / 2.0, (self.height - 1) / 2.0,
                      self.width, self.height)


def procedural_scene(cfg, capacity=None):
    """Seeded random Gaussians inside a ``[-half_size, half_size]^3`` box."""
    rng = np.random.default_rng(cfg.color_seed)
    n = cfg.gaussians
    means = rng.uniform(-cfg.half_size, cfg.half_size, size=(n, 3))
    rotations = np.array([random_rotation(rng) for _ in range(n)]).reshape(n, 3, 3)
    quats = rotation_to_quaternion(rotations) if n else np.zeros((0, 4))
    log_scales = np.log(rng.uniform(cfg.scale_min, cfg.scale_max, size=(n, 3)))
    opacity = rng.uniform(cfg.opacity_min, cfg.opacity_max, size=n)
    colors = rng.uniform(0.05, 0.95, size=(n, 3))
    return SceneModel(means, quats, log_scales, logit(opacity), colors, capacity=capacity or max(n, 1))


def orbit_pose(cfg, angle):
    eye = np.array([cfg.orbit_radius * np.sin(angle), -cfg.orbit_height, -cfg.orbit_radius * np.cos(angle)])
    return SE3Pose.look_at(eye, np.zeros(3))


def orbit_angles(cfg):
    half = np.deg2rad(cfg.orbit_arc) / 2.0
    train = np.linspace(-half, half, cfg.views) if cfg.views > 1 else np.zeros(1)
    test = np.linspace(-half, half, cfg.test_views + 2)[1:-1]
    return train, test


def motion_trajectory(base, cfg, rng, exposure=1.0):
    """Ground-truth Bézier blur motion centred on ``base``."""
    direction = rng.normal(size=3)
    axis = rng.normal(size=3)
    motion = Twist(
        direction / np.linalg.norm(direction) * cfg.motion,
        axis / np.linalg.norm(axis) * np.deg2rad(cfg.motion_rotation),
    )
    m = cfg.gt_control_points - 1
    points = []
    for j in range(cfg.gt_control_points):
        wobble = rng.normal(scale=0.1 * cfg.motion, size=6) * (0 < j < m)
        xi = motion.as_vector() * (j / m - 0.5) + wobble
        points.append(se3_exp(xi).compose(base))
    return BezierTrajectory(tuple(points), exposure)


def frame_times(t_start, exposure, count):
    return [t_start + u * exposure for u in virtual_parameters(count)]


def check_blur_levels(levels, burst_size):
    for level in levels:
        if level < 1 or level > burst_size or level % 2 == 0:
            raise ValueError(f"Blur levels must be odd and at most {burst_size}, got {level}")


def generate_dataset(destination, scene_cfg=None, blur_levels=(1, 3, 5, 7, 9, 11), events=True,
                     threshold=0.2, per_channel=False, burst_size=11, exposure=1.0, seed=0,
                     settings=None):
    """Renders a complete dataset into ``destination`` and returns its settings."""
    scene_cfg = scene_cfg or SceneConfig()
    settings = settings or RenderSettings()
    blur_levels = sorted(set(blur_levels) | {1})
    check_blur_levels(blur_levels, burst_size)
    rng = np.random.default_rng(seed)
    camera = scene_cfg.camera()
    scene = procedural_scene(scene_cfg)

    dataset = DatasetSettings()
    dataset.seed = seed
    dataset.burst_size = burst_size
    dataset.exposure = exposure
    dataset.blur_levels = blur_levels
    dataset.events = events
    dataset.threshold = threshold
    dataset.per_channel_events = per_channel
    dataset.camera = camera
    dataset.scene = scene_cfg.to_dict()
    dataset.persist(destination)
    save_scene(scene, dataset.scene_path)

    train_angles, test_angles = orbit_angles(scene_cfg)
    period = 2.0 * exposure
    stamps, poses, streams = [], [], []
    for view, angle in enumerate(tqdm(train_angles, desc="Rendering views")):
        t_start = view * period
        dataset.add_view(view, "train", t_start, t_start + exposure)
        traj = motion_trajectory(orbit_pose(scene_cfg, angle), scene_cfg, rng, exposure)
        burst = synthesize_burst(scene, traj, camera, burst_size, t_start, settings)
        for frame, (t, image) in enumerate(burst):
            write_image(dataset.sharp_frame_path(view, frame), image)
            stamps.append(t)
            poses.append(traj.pose(virtual_parameters(burst_size)[frame]))
        for level in blur_levels:
            if level > 1:
                write_image(dataset.blur_path(view, level), average_frames(burst[:level]))
        if events:
            streams.append(generate_events(burst, threshold, per_channel))
    write_tum(dataset.trajectory_path, stamps, poses)

    test_poses = [orbit_pose(scene_cfg, a) for a in test_angles]
    for i, pose in enumerate(test_poses):
        dataset.add_view(i, "test", 0.0, 0.0)
        write_image(dataset.test_path(i), render(scene, pose, camera, settings))
    if test_poses:
        write_tum(dataset.test_poses_path, range(len(test_poses)), test_poses)
    if events and streams:
        write_events(dataset.events_path, concatenate_streams(streams))
    dataset.save()
    print(f"Dataset written to {destination}")
    return dataset


class Dataset:
    """Read access to a generated dataset folder."""

    def __init__(self, root):
        self.settings = DatasetSettings(root)
        self.root = self.settings.root
        self.camera = self.settings.camera
        if self.camera is None:
            raise DatasetError(f"No [camera] section in {self.settings.config_path}")
        self._frames = None
        self._events = None

    @property
    def train_views(self):
        return [v["index"] for v in self.settings.split("train")]

    @property
    def test_views(self):
        return [v["index"] for v in self.settings.split("test")]

    @property
    def has_events(self):
        return self.settings.events and self.settings.events_path.is_file()

    def _view(self, index):
        for v in self.settings.split("train"):
            if v["index"] == index:
                return v
        raise DatasetError(f"No training view {index} in {self.root}")

    def check_level(self, level):
        if level not in self.settings.blur_levels:
            raise DatasetError(f"Blur level {level} is not part of {self.root}")

    def level_window(self, view, level):
        """Exposure window of the blur-``level`` image of ``view``."""
        v = self._view(view)
        times = frame_times(v["t_start"], self.settings.exposure, self.settings.burst_size)
        return times[0], times[level - 1]

    def blurred(self, view, level):
        self.check_level(level)
        image = read_image(self.settings.blur_path(view, level), ImageRole.OBSERVED)
        image.exposure = self.level_window(view, level)
        return image

    def sharp_frame(self, view, frame):
        image = read_image(self.settings.sharp_frame_path(view, frame), ImageRole.SHARP)
        image.timestamp = frame_times(self._view(view)["t_start"], self.settings.exposure,
                                      self.settings.burst_size)[frame]
        return image

    def sharp_mid(self, view, level):
        return self.sharp_frame(view, (level - 1) // 2)

    def gt_frames(self):
        """Ground-truth poses of every burst frame, keyed by training view."""
        if self._frames is None:
            _, poses = read_tum(self.settings.trajectory_path)
            size = self.settings.burst_size
            views = self.train_views
            if len(poses) != size * len(views):
                raise DatasetError(f"{self.settings.trajectory_path} holds {len(poses)} poses, "
                                   f"expected {size * len(views)}")
            self._frames = {v: poses[i * size:(i + 1) * size] for i, v in enumerate(views)}
        return self._frames

    def gt_mid_pose(self, view, level):
        return self.gt_frames()[view][(level - 1) // 2]

    def events(self):
        if not self.settings.events:
            raise DatasetError(f"Dataset {self.root} was generated without events")
        if self._events is None:
            self._events = read_events(self.settings.events_path)
        return self._events

    def view_events(self, view, level):
        t0, t1 = self.level_window(view, level)
        return self.events().window_slice(t0, t1)

    def test_poses(self):
        if not self.settings.test_poses_path.is_file():
            return []
        return read_tum(self.settings.test_poses_path)[1]

    def test_image(self, index):
        return read_image(self.settings.test_path(index), ImageRole.SHARP)

    def gt_scene(self):
        return load_scene(self.settings.scene_path)


def load_dataset(root):
    root = Path(root)
    return Dataset(root)
