"""
Event-based double integral deblurring.

The blurred frame is the mean of the latent image over the exposure. Between
the latent time ``f`` and a time ``s`` the log intensity changes by
``threshold * E(f, s)`` where ``E`` is the signed event count, so the blur is
``L(f)`` times the mean of ``exp(threshold * E)``. The exposure is split into
``b`` equal bins and the relative exposure is held constant over each bin at
its value at the bin centre, giving ``L(f) = B * b / sum_k E_k(f)``.

Each event marks the instant the log intensity reached a known level, one
threshold away from the previous one and counted from the level at the window
start. With ``interpolate`` the level between events is read off linearly,
continued past the last event at the final slope and kept within one threshold
of the last level. Without it the level is the plain step count.
"""

from dataclasses import dataclass, field

import numpy as np
import polars as pl

from .eventsim import DEFAULT_THRESHOLD, bin_centres
from .renderer import ImageBuffer, ImageRole

WINDOW_TOLERANCE = 1e-9


class EdiError(Exception):
    """Raised for invalid deblurring parameters or mismatched exposure windows."""
    pass


@dataclass(frozen=True)
class EdiConfig:
    threshold: float = DEFAULT_THRESHOLD
    bins: int = 13
    latent_time: float = 0.5
    interpolate: bool = True

    def __post_init__(self):
        if not self.threshold > 0.0:
            raise EdiError("EDI threshold must be positive")
        if self.bins < 2:
            raise EdiError("EDI needs at least two bins")
        if not 0.0 <= self.latent_time <= 1.0:
            raise EdiError("Latent time must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class DeblurredImage:
    """An EDI reconstruction. Only usable to initialise poses and points."""

    image: ImageBuffer
    view: int = 0
    degraded: bool = False
    message: str = ""
    supervision: bool = field(default=False, init=False)

    @property
    def pixels(self):
        return self.image.pixels


def _exposure_window(blur, stream):
    if blur.exposure is None:
        return stream.window
    t0, t1 = blur.exposure
    if abs(t0 - stream.t_start) > WINDOW_TOLERANCE or abs(t1 - stream.t_end) > WINDOW_TOLERANCE:
        raise EdiError(
            f"Event window {stream.window} does not match the blur exposure {blur.exposure}"
        )
    return t0, t1




def _pixel_index(df, width, per_channel):
    pixel = df["y"].to_numpy().astype(np.int64) * width + df["x"].to_numpy()
    if per_channel:
        pixel = pixel * 3 + df["c"].to_numpy()
    return pixel


def event_levels(stream, shape, times, threshold, window=None, interpolate=True):
    """Log-intensity change since the window start at each of ``times``.

    Returns a ``(len(times), H, W)`` array, or ``(len(times), H, W, 3)`` for
    per-channel streams. Pixels without events stay at zero.
    """
    t0, t1 = window or stream.window
    height, width = shape[:2]
    grid = (height, width, 3) if stream.per_channel else (height, width)
    times = np.asarray(times, dtype=np.float64)
    out = np.zeros((len(times), int(np.prod(grid))))
    df = stream.df.filter((pl.col("t") >= t0) & (pl.col("t") <= t1))
    if df.height == 0:
        return out.reshape((len(times),) + grid)

    # group by pixel, time order within a group
    pixel = _pixel_index(df, width, stream.per_channel)
    order = np.argsort(pixel, kind="stable")
    pixel = pixel[order]
    t = df["t"].to_numpy()[order]
    p = df["p"].to_numpy().astype(np.float64)[order]
    starts = np.flatnonzero(np.r_[True, pixel[1:] != pixel[:-1]])
    counts = np.diff(np.r_[starts, len(pixel)])
    steps = np.cumsum(p)
    level = threshold * (steps - np.repeat(steps[starts] - p[starts], counts))

    last = starts + counts - 1
    # slope into the last event, from the previous event or the window start
    before_last = np.where(counts > 1, last - 1, last)
    tail_t = np.where(counts > 1, t[before_last], t0)
    tail_level = np.where(counts > 1, level[before_last], 0.0)
    tail_span = t[last] - tail_t
    tail_slope = np.divide(level[last] - tail_level, tail_span, out=np.zeros(len(last)),
                           where=tail_span > 0.0)

    for i, q in enumerate(times):
        seen = np.add.reduceat((t <= q).astype(np.int64), starts)
        has_prev = seen > 0
        prev = np.where(has_prev, starts + seen - 1, starts)
        prev_t = np.where(has_prev, t[prev], t0)
        prev_level = np.where(has_prev, level[prev], 0.0)
        value = prev_level
        if interpolate:
            has_next = seen < counts
            nxt = np.where(has_next, starts + seen, last)
            span = t[nxt] - prev_t
            inside = has_next & (span > 0.0)
            frac = np.divide(q - prev_t, span, out=np.zeros(len(span)), where=inside)
            value = np.where(inside, prev_level + frac * (level[nxt] - prev_level), prev_level)
            tail = np.clip(level[last] + tail_slope * (q - t[last]),
                           level[last] - threshold, level[last] + threshold)
            value = np.where(has_next, value, tail)
        out[i, pixel[starts]] = value
    return out.reshape((len(times),) + grid)


def exposure_ratio(shape, stream, cfg, window=None):
    """Mean relative exposure ``B / L(f)`` over the ``b`` bins, per pixel (and channel for per-channel streams)."""
    t0, t1 = window or stream.window
    span = stream.with_df(stream.df, (t0, t1))
    t_latent = t0 + cfg.latent_time * (t1 - t0)
    times = np.r_[t_latent, bin_centres(span, cfg.bins)]
    levels = event_levels(span, shape, times, cfg.threshold, (t0, t1), cfg.interpolate)
    return np.exp(levels[1:] - levels[0]).mean(axis=0)


def edi_deblur(blur, stream, cfg=None):
    """Latent sharp image at ``cfg.latent_time`` from a blurred frame and its events.

    Luminance streams scale all three channels by the same ratio, which
    transfers the blurred frame's chroma onto the reconstruction.

    Raises:
        EdiError: if the event window differs from the blur exposure.
    """
    cfg = cfg or EdiConfig(threshold=stream.threshold)
    window = _exposure_window(blur, stream)
    ratio = exposure_ratio(blur.shape, stream, cfg, window)
    if not stream.per_channel:
        ratio = ratio[..., None]
    latent = np.clip(blur.pixels / ratio, 0.0, 1.0)
    t_latent = window[0] + cfg.latent_time * (window[1] - window[0])
    return ImageBuffer(latent, timestamp=t_latent, exposure=window, role=ImageRole.DEBLURRED)


def edi_init_views(views, cfg=None):
    """Deblurs every ``(blur, stream)`` pair for initialisation.

    A failing view is passed through as its blurred input, flagged degraded,
    and the batch continues.
    """
    out = []
    for i, (blur, stream) in enumerate(views):
        if stream is None or stream.is_empty():
            out.append(DeblurredImage(blur.with_role(ImageRole.DEBLURRED), i, True, "no events"))
            continue
        try:
            image = edi_deblur(blur, stream, cfg)
        except EdiError as e:
            print(f"Warning: EDI failed for view {i}: {e}")
            out.append(DeblurredImage(blur.with_role(ImageRole.DEBLURRED), i, True, str(e)))
            continue
        out.append(DeblurredImage(image, i))
    return out
