"""
Image files: 8-bit sRGB-ish PNG (gamma 2.2) and lossless float32 NPY grids.

All math happens in linear radiance; gamma is applied only here.
"""

from pathlib import Path

import cv2
import numpy as np

from ..renderer import ImageBuffer, ImageRole

GAMMA = 2.2


def encode_png(pixels):
    """Linear radiance to gamma-encoded 8-bit BGR."""
    encoded = np.clip(pixels, 0.0, 1.0) ** (1.0 / GAMMA)
    rgb = np.rint(encoded * 255.0).astype(np.uint8)
    return cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR)


def write_png(path, image):
    pixels = image.pixels if isinstance(image, ImageBuffer) else np.asarray(image)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), encode_png(pixels)):
        raise OSError(f"Could not write image {path}")


def read_png(path, role=ImageRole.OBSERVED):
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise FileNotFoundError(f"Could not read image {path}")
    rgb = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB).astype(np.float64) / 255.0
    return ImageBuffer(rgb**GAMMA, role=role)


def write_npy(path, image):
    pixels = image.pixels if isinstance(image, ImageBuffer) else np.asarray(image)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.save(path, pixels.astype(np.float32))


def read_npy(path, role=ImageRole.OBSERVED):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Image grid not found: {path}")
    return ImageBuffer(np.load(path).astype(np.float64), role=role)


def write_image(path, image):
    """Writes ``<path>.png`` and ``<path>.npy`` next to each other."""
    path = Path(path)
    write_png(path.with_suffix(".png"), image)
    write_npy(path.with_suffix(".npy"), image)


def read_image(path, role=ImageRole.OBSERVED):
    """Prefers the lossless grid when both encodings exist."""
    path = Path(path)
    if path.with_suffix(".npy").is_file():
        return read_npy(path.with_suffix(".npy"), role)
    return read_png(path.with_suffix(".png"), role)
