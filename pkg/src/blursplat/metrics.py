"""
Image quality and pose accuracy metrics.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import polars as pl
from scipy.signal import convolve2d, correlate2d

from .renderer import ImageBuffer, ShapeMismatchError

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = 0.01**2
C2 = 0.03**2


def _pixels(image):
    return image.pixels if isinstance(image, ImageBuffer) else np.asarray(image, dtype=np.float64)


def _matched(a, b):
    a, b = _pixels(a), _pixels(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"Image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """``10 log10(1 / MSE)``, capped at 99 dB."""
    a, b = _matched(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_terms(x, y, window):
    mx = correlate2d(x, window, mode="valid")
    my = correlate2d(y, window, mode="valid")
    sxx = correlate2d(x * x, window, mode="valid") - mx * mx
    syy = correlate2d(y * y, window, mode="valid") - my * my
    sxy = correlate2d(x * y, window, mode="valid") - mx * my
    a1 = 2.0 * mx * my + C1
    a2 = 2.0 * sxy + C2
    b1 = mx * mx + my * my + C1
    b2 = sxx + syy + C2
    return mx, my, a1, a2, b1, b2, (a1 * a2) / (b1 * b2)


def _check_size(image):
    if image.shape[0] < SSIM_WINDOW or image.shape[1] < SSIM_WINDOW:
        raise ShapeMismatchError(
            f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {image.shape[:2]}"
        )


def ssim(a, b):
    """Mean SSIM over valid window positions of all channels."""
    a, b = _matched(a, b)
    _check_size(a)
    window = gaussian_window()
    maps = [_ssim_terms(a[..., c], b[..., c], window)[-1] for c in range(a.shape[2])]
    return float(np.mean(maps))


def ssim_with_gradient(pred, target):
    """SSIM of ``pred`` against ``target`` and its gradient with respect to ``pred``."""
    x_all, y_all = _matched(pred, target)
    _check_size(x_all)
    window = gaussian_window()
    grad = np.zeros_like(x_all)
    total = 0.0
    count = 0
    for c in range(x_all.shape[2]):
        x, y = x_all[..., c], y_all[..., c]
        mx, my, a1, a2, b1, b2, s = _ssim_terms(x, y, window)
        total += s.sum()
        count += s.size
        d_mean = s * ((2.0 * my / a1 - 2.0 * mx / b1) + (2.0 * mx / b2 - 2.0 * my / a2))
        d_xx = -s / b2
        d_xy = 2.0 * s / a2
        grad[..., c] = (
            convolve2d(d_mean, window, mode="full")
            + 2.0 * x * convolve2d(d_xx, window, mode="full")
            + y * convolve2d(d_xy, window, mode="full")
        )
    return total / count, grad / count


@dataclass(frozen=True)
class ApeStats:
    rmse: float
    mean: float
    median: float
    std: float
    minimum: float
    maximum: float
    errors: tuple = ()

    @classmethod
    def from_errors(cls, errors):
        e = np.asarray(errors, dtype=np.float64)
        return cls(
            float(np.sqrt(np.mean(e * e))), float(e.mean()), float(np.median(e)),
            float(e.std()), float(e.min()), float(e.max()), tuple(e.tolist()),
        )

    def as_dict(self):
        return {
            "rmse": self.rmse, "mean": self.mean, "median": self.median,
            "std": self.std, "min": self.minimum, "max": self.maximum,
        }


def umeyama_alignment(source, target):
    """Rotation and translation minimising ``|R source + t - target|`` (no scale)."""
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mu_s, mu_t = source.mean(0), target.mean(0)
    cov = (target - mu_t).T @ (source - mu_s) / len(source)
    u, _, vt = np.linalg.svd(cov)
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0.0:
        s[2, 2] = -1.0
    rotation = u @ s @ vt
    return rotation, mu_t - rotation @ mu_s


def _centers(poses):
    return np.array([p.center for p in poses]).reshape(-1, 3)


def ape(est, gt, align=False):
    """Camera-centre translation error statistics between matched pose lists."""
    est, gt = list(est), list(gt)
    if len(est) != len(gt):
        raise ValueError(f"Trajectory lengths differ: {len(est)} vs {len(gt)}")
    if not est:
        raise ValueError("Cannot evaluate an empty trajectory")
    e, g = _centers(est), _centers(gt)
    if align and len(e) >= 3:
        rotation, translation = umeyama_alignment(e, g)
        e = e @ rotation.T + translation
    elif align:
        e = e - e.mean(0) + g.mean(0)
    return ApeStats.from_errors(np.linalg.norm(e - g, axis=1))


class EvalReport:
    """Per-view image metrics plus pose error statistics."""

    def __init__(self, views=None, ape_stats=None, initial_ape=None):
        self.views = views if views is not None else pl.DataFrame(
            schema={"view": pl.Int64, "split": pl.Utf8, "psnr": pl.Float64, "ssim": pl.Float64}
        )
        self.ape = ape_stats
        self.initial_ape = initial_ape

    @classmethod
    def from_images(cls, pairs, ape_stats=None, initial_ape=None):
        """``pairs`` holds ``(view, split, prediction, reference)`` tuples."""
        rows = [
            {"view": view, "split": split, "psnr": psnr(pred, ref), "ssim": ssim(pred, ref)}
            for view, split, pred, ref in pairs
        ]
        df = pl.DataFrame(rows, schema={"view": pl.Int64, "split": pl.Utf8, "psnr": pl.Float64, "ssim": pl.Float64})
        return cls(df, ape_stats, initial_ape)

    def split(self, name):
        return self.views.filter(pl.col("split") == name)

    def summary(self):
        """One row per split with mean and median PSNR/SSIM."""
        return (
            self.views.group_by("split", maintain_order=True)
            .agg(
                pl.col("psnr").mean().alias("psnr_mean"),
                pl.col("psnr").median().alias("psnr_median"),
                pl.col("ssim").mean().alias("ssim_mean"),
                pl.col("ssim").median().alias("ssim_median"),
            )
        )

    def mean_psnr(self, split="test"):
        df = self.split(split)
        return float(df["psnr"].mean()) if df.height else float("nan")

    def ape_frame(self):
        rows = []
        for label, stats in (("final", self.ape), ("initial", self.initial_ape)):
            if stats is not None:
                rows.append({"trajectory": label, **stats.as_dict()})
        return pl.DataFrame(rows) if rows else None

    def to_text(self):
        lines = [aligned_table(self.views), "", aligned_table(self.summary())]
        ape_df = self.ape_frame()
        if ape_df is not None:
            lines += ["", aligned_table(ape_df)]
        return "\n".join(lines)

    def write(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.views.write_csv(directory / "report.csv", float_precision=6)
        ape_df = self.ape_frame()
        if ape_df is not None:
            ape_df.write_csv(directory / "ape.csv", float_precision=6)
        (directory / "report.txt").write_text(self.to_text() + "\n")

    def __str__(self):
        return self.to_text()


def aligned_table(df):
    """Fixed-width text rendering of a small DataFrame."""
    cells = [[str(c) for c in df.columns]]
    for row in df.iter_rows():
        cells.append([f"{v:.4f}" if isinstance(v, float) else str(v) for v in row])
    widths = [max(len(r[i]) for r in cells) for i in range(len(df.columns))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in cells)
