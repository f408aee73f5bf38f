"""
TUM trajectory files: ``timestamp tx ty tz qx qy qz qw`` per line.

Lines store the camera-to-world transform (camera centre and orientation);
poses in memory are world-to-camera, so both directions invert.
"""

from pathlib import Path

import numpy as np
import polars as pl
from scipy.spatial.transform import Rotation

from ..liegroup import SE3Pose

COLUMNS = ["timestamp", "tx", "ty", "tz", "qx", "qy", "qz", "qw"]


class TumFormatError(Exception):
    """Raised when a trajectory file cannot be parsed."""
    pass


def _format(value):
    return f"{value:.17g}"


def write_tum(path, timestamps, poses):
    timestamps = list(timestamps)
    poses = list(poses)
    if len(timestamps) != len(poses):
        raise ValueError(f"{len(timestamps)} timestamps for {len(poses)} poses")
    lines = ["# " + " ".join(COLUMNS)]
    for t, pose in zip(timestamps, poses):
        world = pose.inverse()
        quat = Rotation.from_matrix(world.rotation).as_quat()
        values = [t, *world.translation, *quat]
        lines.append(" ".join(_format(float(v)) for v in values))
    Path(path).write_text("\n".join(lines) + "\n")


def read_tum(path):
    """Returns ``(timestamps, poses)`` with world-to-camera poses."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Trajectory file not found: {path}")
    if not any(line.strip() and not line.startswith("#") for line in path.read_text().splitlines()):
        return np.zeros(0), []
    try:
        df = pl.read_csv(
            path,
            separator=" ",
            has_header=False,
            comment_prefix="#",
            new_columns=COLUMNS,
        ).cast(pl.Float64)
    except pl.exceptions.NoDataError:
        return np.zeros(0), []
    except pl.exceptions.PolarsError as e:
        raise TumFormatError(f"Malformed trajectory file {path}: {e}") from e
    if df.width != len(COLUMNS):
        raise TumFormatError(f"Expected {len(COLUMNS)} columns in {path}, got {df.width}")
    values = df.to_numpy()
    if not np.all(np.isfinite(values)):
        raise TumFormatError(f"Non-finite values in {path}")
    rotations = Rotation.from_quat(values[:, 4:8]).as_matrix()
    poses = [
        SE3Pose(r, t).inverse()
        for r, t in zip(rotations.reshape(-1, 3, 3), values[:, 1:4])
    ]
    return values[:, 0].copy(), poses
