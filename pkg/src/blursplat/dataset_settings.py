import toml
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

from .scene import Camera


class DatasetNotFoundError(Exception):
    """Raised when a dataset folder or camera.cfg file is not found."""
    pass


class DatasetSettings:
    def __init__(self, config_path=None):
        self._in_memory = config_path is None

        if self._in_memory:
            self.config_path = None
            self.data = {"dataset": {}}
            return

        self.config_path = Path(config_path)

        if self.config_path.is_dir():
            self.config_path = self.config_path / "camera.cfg"

        if not self.config_path.parent.exists():
            raise DatasetNotFoundError(f"Dataset folder not found: {self.config_path.parent}")

        if not self.config_path.is_file():
            raise DatasetNotFoundError(f"Dataset file not found: {self.config_path}")

        with open(self.config_path, "rb") as f:
            self.data = tomllib.load(f)

    def persist(self, dataset_dir):
        """Save an in-memory dataset description to disk."""
        dataset_dir = Path(dataset_dir)
        dataset_dir.mkdir(parents=True, exist_ok=True)
        self.config_path = dataset_dir / "camera.cfg"
        self.save()
        self._in_memory = False

    @property
    def root(self):
        return self.config_path.parent if self.config_path else None

    def _section(self, name):
        if name not in self.data:
            self.data[name] = {}
        return self.data[name]

    @property
    def seed(self):
        return self.data.get("dataset", {}).get("seed", 0)

    @seed.setter
    def seed(self, value):
        self._section("dataset")["seed"] = int(value)

    @property
    def burst_size(self):
        return self.data.get("dataset", {}).get("burst_size", 11)

    @burst_size.setter
    def burst_size(self, value):
        self._section("dataset")["burst_size"] = int(value)

    @property
    def exposure(self):
        return self.data.get("dataset", {}).get("exposure", 1.0)

    @exposure.setter
    def exposure(self, value):
        self._section("dataset")["exposure"] = float(value)

    @property
    def blur_levels(self):
        return list(self.data.get("dataset", {}).get("blur_levels", [1]))

    @blur_levels.setter
    def blur_levels(self, value):
        self._section("dataset")["blur_levels"] = [int(v) for v in value]

    @property
    def events(self):
        """True when the dataset ships an events.txt stream."""
        return bool(self.data.get("dataset", {}).get("events", False))

    @events.setter
    def events(self, value):
        self._section("dataset")["events"] = bool(value)

    @property
    def threshold(self):
        return self.data.get("dataset", {}).get("threshold", 0.2)

    @threshold.setter
    def threshold(self, value):
        self._section("dataset")["threshold"] = float(value)

    @property
    def per_channel_events(self):
        return self.data.get("dataset", {}).get("event_mode", "luminance") == "per-channel"

    @per_channel_events.setter
    def per_channel_events(self, value):
        self._section("dataset")["event_mode"] = "per-channel" if value else "luminance"

    @property
    def camera(self):
        if "camera" not in self.data:
            return None
        return Camera.from_dict(self.data["camera"])

    @camera.setter
    def camera(self, value):
        self.data["camera"] = value.to_dict()

    @property
    def views(self):
        """Training and test views as dicts with ``index``, ``split``, ``t_start``, ``t_end``."""
        return list(self.data.get("views", []))

    def add_view(self, index, split, t_start, t_end):
        self.data.setdefault("views", []).append(
            {"index": int(index), "split": split, "t_start": float(t_start), "t_end": float(t_end)}
        )

    def split(self, name):
        return [v for v in self.views if v["split"] == name]

    @property
    def scene(self):
        return dict(self.data.get("scene", {}))

    @scene.setter
    def scene(self, value):
        self.data["scene"] = dict(value)

    def blur_dir(self, level):
        return self.root / ("sharp" if level == 1 else f"blur_{level}")

    def sharp_frame_path(self, view, frame):
        return self.root / "sharp" / f"view_{view:03d}_frame_{frame:02d}"

    def blur_path(self, view, level):
        if level == 1:
            return self.sharp_frame_path(view, 0)
        return self.blur_dir(level) / f"view_{view:03d}"

    def test_path(self, view):
        return self.root / "test" / f"view_{view:03d}"

    @property
    def events_path(self):
        return self.root / "events.txt"

    @property
    def trajectory_path(self):
        return self.root / "trajectory_gt.tum"

    @property
    def test_poses_path(self):
        return self.root / "test" / "poses.tum"

    @property
    def scene_path(self):
        return self.root / "scene_gt.toml"

    def save(self, path=None):
        save_path = Path(path) if path else self.config_path
        if save_path is None:
            raise ValueError("No path specified for in-memory dataset. Use persist() instead.")
        with open(save_path, "w") as f:
            toml.dump(self.data, f)

    def __str__(self):
        if self._in_memory:
            header = "Dataset Settings (in-memory):"
        else:
            header = f"Dataset Settings from {self.config_path}:"

        lines = [
            header,
            f"  - Seed: {self.seed}",
            f"  - Burst size: {self.burst_size}",
            f"  - Blur levels: {self.blur_levels}",
            f"  - Views: {len(self.split('train'))} train, {len(self.split('test'))} test",
        ]
        camera = self.camera
        if camera:
            lines.append(f"  - Dimensions: {camera.width}x{camera.height}")
        if self.events:
            mode = "per-channel" if self.per_channel_events else "luminance"
            lines.append(f"  - Events: threshold {self.threshold} ({mode})")
        return "\n".join(lines)

    def __repr__(self):
        if self._in_memory:
            return "DatasetSettings(in_memory=True)"
        return f"DatasetSettings(config_path='{self.config_path}')"
