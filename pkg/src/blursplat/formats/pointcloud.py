"""
ASCII PLY point clouds with optional 8-bit colours.
"""

from pathlib import Path

import numpy as np


class PointCloudFormatError(Exception):
    """Raised when a PLY file cannot be parsed."""
    pass


def write_ply(path, points, colors=None):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(points)}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if colors is not None:
        colors = np.rint(np.clip(np.asarray(colors).reshape(-1, 3), 0.0, 1.0) * 255).astype(int)
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")
    lines = []
    for i, p in enumerate(points):
        row = [f"{v:.17g}" for v in p]
        if colors is not None:
            row += [str(c) for c in colors[i]]
        lines.append(" ".join(row))
    Path(path).write_text("\n".join(header + lines) + "\n")


def read_ply(path):
    """Returns ``(points, colors)``; ``colors`` is None when absent, else in [0, 1]."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise PointCloudFormatError(f"{path} is not a PLY file")
    try:
        end = lines.index("end_header")
    except ValueError as e:
        raise PointCloudFormatError(f"{path} has no end_header") from e
    count = 0
    properties = []
    for line in lines[1:end]:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            count = int(parts[2])
        elif parts and parts[0] == "property":
            properties.append(parts[-1])
    rows = [line.split() for line in lines[end + 1:end + 1 + count]]
    if len(rows) != count or any(len(r) != len(properties) for r in rows):
        raise PointCloudFormatError(f"Vertex data in {path} does not match its header")
    data = np.array(rows, dtype=np.float64).reshape(count, len(properties))
    points = data[:, [properties.index(a) for a in ("x", "y", "z")]]
    colors = None
    if "red" in properties:
        colors = data[:, [properties.index(c) for c in ("red", "green", "blue")]] / 255.0
    return points, colors
