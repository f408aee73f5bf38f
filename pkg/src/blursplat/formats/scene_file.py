"""
Scene files.

``.toml`` files hold one ``[[gaussian]]`` table per splat with named fields;
any other suffix is the little-endian binary layout: magic ``GSPL``, then
``version``, ``count`` and ``capacity`` as u32, then the parameter arrays as
``<f8`` in ``PARAMETER_GROUPS`` order.
"""

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

import numpy as np
import toml

from ..scene import PARAMETER_GROUPS, SceneModel

SCENE_VERSION = 1
MAGIC = b"GSPL"
TEXT_SUFFIXES = (".toml", ".txt")

# per-record field name and width of every parameter group
FIELDS = {
    "means": ("mu", 3),
    "quats": ("q", 4),
    "log_scales": ("log_scale", 3),
    "opacity_logits": ("opacity_logit", 1),
    "colors": ("color", 3),
}


class SceneFormatError(Exception):
    """Raised for malformed, non-finite or version-mismatched scene files."""
    pass


def _validate(params, source):
    for name, values in params.items():
        if not np.all(np.isfinite(values)):
            raise SceneFormatError(f"Non-finite {FIELDS[name][0]} in {source}")


def save_scene(scene, path):
    path = Path(path)
    if path.suffix in TEXT_SUFFIXES:
        _save_text(scene, path)
    else:
        _save_binary(scene, path)


def load_scene(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Scene file not found: {path}")
    if path.suffix in TEXT_SUFFIXES:
        return _load_text(path)
    return _load_binary(path)


def _save_text(scene, path):
    records = []
    for i in range(len(scene)):
        record = {}
        for name in PARAMETER_GROUPS:
            key, width = FIELDS[name]
            value = getattr(scene, name)[i]
            record[key] = float(value) if width == 1 else [float(v) for v in value]
        records.append(record)
    data = {"scene": {"version": SCENE_VERSION, "capacity": int(scene.capacity), "count": len(scene)}}
    if records:
        data["gaussian"] = records
    with open(path, "w") as f:
        toml.dump(data, f)


def _load_text(path):
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise SceneFormatError(f"Malformed scene file {path}: {e}") from e
    header = data.get("scene")
    if header is None:
        raise SceneFormatError(f"Missing [scene] table in {path}")
    if header.get("version") != SCENE_VERSION:
        raise SceneFormatError(f"Unsupported scene version {header.get('version')} in {path}")
    records = data.get("gaussian", [])
    params = {}
    try:
        for name in PARAMETER_GROUPS:
            key, width = FIELDS[name]
            values = np.array([r[key] for r in records], dtype=np.float64)
            params[name] = values.reshape(len(records), width) if width > 1 else values.reshape(len(records))
    except (KeyError, ValueError, TypeError) as e:
        raise SceneFormatError(f"Malformed Gaussian record in {path}: {e}") from e
    _validate(params, path)
    capacity = max(int(header.get("capacity", len(records))), len(records), 1)
    return SceneModel(**params, capacity=capacity)


def _save_binary(scene, path):
    header = np.array([SCENE_VERSION, len(scene), scene.capacity], dtype="<u4")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(header.tobytes())
        for name in PARAMETER_GROUPS:
            f.write(np.ascontiguousarray(getattr(scene, name), dtype="<f8").tobytes())


def _load_binary(path):
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise SceneFormatError(f"{path} is not a binary scene file")
    if len(raw) < 16:
        raise SceneFormatError(f"Truncated scene header in {path}")
    version, count, capacity = np.frombuffer(raw[4:16], dtype="<u4")
    if version != SCENE_VERSION:
        raise SceneFormatError(f"Unsupported scene version {version} in {path}")
    expected = 16 + 8 * int(count) * sum(w for _, w in FIELDS.values())
    if len(raw) != expected:
        raise SceneFormatError(f"Scene file {path} has {len(raw)} bytes, expected {expected}")
    offset = 16
    params = {}
    for name in PARAMETER_GROUPS:
        width = FIELDS[name][1]
        size = int(count) * width
        values = np.frombuffer(raw, dtype="<f8", count=size, offset=offset).astype(np.float64)
        params[name] = values.reshape(int(count), width) if width > 1 else values
        offset += 8 * size
    _validate(params, path)
    return SceneModel(**params, capacity=max(int(capacity), int(count), 1))
