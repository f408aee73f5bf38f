"""
Burst synthesis, blur by frame averaging, and the log-intensity threshold event model.

Events are held in a polars DataFrame with columns ``t`` (seconds), ``x``,
``y`` (pixel column/row) and ``p`` (polarity, +1/-1); streams simulated per
colour channel carry an extra ``c`` column.
"""

from dataclasses import dataclass

import numpy as np
import polars as pl

from .renderer import ImageBuffer, ImageRole, RenderSettings, ShapeMismatchError, render
from .trajectory import virtual_parameters

EPSILON = 1e-4
DEFAULT_THRESHOLD = 0.2
LUMA_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])
# slack for log differences that should be exact multiples of the threshold
CROSSING_TOLERANCE = 1e-9

EVENT_SCHEMA = {"t": pl.Float64, "x": pl.Int32, "y": pl.Int32, "p": pl.Int8}
CHANNEL_SCHEMA = {**EVENT_SCHEMA, "c": pl.Int8}


class EventStreamError(Exception):
    """Raised for unsorted, out-of-window or otherwise invalid event data."""
    pass


@dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: float
    p: int

    def __post_init__(self):
        if self.p not in (-1, 1):
            raise EventStreamError(f"Polarity must be -1 or +1, got {self.p}")


def luminance(pixels):
    return np.asarray(pixels, dtype=np.float64) @ LUMA_WEIGHTS


class EventStream:
    """Time-sorted events, their threshold and the window they were recorded in."""

    def __init__(self, df=None, threshold=DEFAULT_THRESHOLD, window=(0.0, 1.0), per_channel=False):
        schema = CHANNEL_SCHEMA if per_channel else EVENT_SCHEMA
        if df is None:
            df = pl.DataFrame(schema=schema)
        self.df = df.select(list(schema)).cast(schema)
        self.threshold = float(threshold)
        self.window = (float(window[0]), float(window[1]))
        self.per_channel = per_channel
        if not self.threshold > 0.0:
            raise EventStreamError("Event threshold must be positive")
        if self.window[1] < self.window[0]:
            raise EventStreamError(f"Invalid event window {self.window}")
        t = self.df["t"].to_numpy()
        if len(t) and np.any(np.diff(t) < 0.0):
            raise EventStreamError("Event timestamps must be nondecreasing")

    @classmethod
    def from_events(cls, events, threshold=DEFAULT_THRESHOLD, window=(0.0, 1.0)):
        events = list(events)
        df = pl.DataFrame(
            {
                "t": [e.t for e in events],
                "x": [e.x for e in events],
                "y": [e.y for e in events],
                "p": [e.p for e in events],
            },
            schema=EVENT_SCHEMA,
        )
        return cls(df.sort("t", maintain_order=True), threshold, window)

    @property
    def events(self):
        return [Event(r["x"], r["y"], r["t"], r["p"]) for r in self.df.iter_rows(named=True)]

    @property
    def t_start(self):
        return self.window[0]

    @property
    def t_end(self):
        return self.window[1]

    @property
    def duration(self):
        return self.window[1] - self.window[0]

    def __len__(self):
        return self.df.height

    def is_empty(self):
        return self.df.height == 0

    def with_df(self, df, window=None):
        return EventStream(df, self.threshold, window or self.window, self.per_channel)

    def between(self, t0, t1):
        """Events with ``t0 < t <= t1``."""
        return self.with_df(self.df.filter((pl.col("t") > t0) & (pl.col("t") <= t1)))

    def window_slice(self, t0, t1):
        """Events with ``t0 <= t <= t1`` as a stream recorded over that window."""
        df = self.df.filter((pl.col("t") >= t0) & (pl.col("t") <= t1))
        return self.with_df(df, (t0, t1))

    def signed_counts(self, shape, t0=None, t1=None):
        """Per-pixel sum of polarities for events with ``t0 < t <= t1``.

        Returns an (H, W) array, or (H, W, 3) for per-channel streams.
        """
        df = self.df
        if t0 is not None:
            df = df.filter(pl.col("t") > t0)
        if t1 is not None:
            df = df.filter(pl.col("t") <= t1)
        height, width = shape[:2]
        x = df["x"].to_numpy()
        y = df["y"].to_numpy()
        p = df["p"].to_numpy().astype(np.int64)
        if self.per_channel:
            out = np.zeros((height, width, 3), dtype=np.int64)
            np.add.at(out, (y, x, df["c"].to_numpy()), p)
        else:
            out = np.zeros((height, width), dtype=np.int64)
            np.add.at(out, (y, x), p)
        return out

    def check_bounds(self, width, height):
        if self.is_empty():
            return
        x = self.df["x"].to_numpy()
        y = self.df["y"].to_numpy()
        if x.min() < 0 or y.min() < 0 or x.max() >= width or y.max() >= height:
            raise EventStreamError(f"Event coordinates outside a {width}x{height} sensor")

    def __repr__(self):
        return (
            f"EventStream(events={len(self)}, threshold={self.threshold}, "
            f"window={self.window}, per_channel={self.per_channel})"
        )


def synthesize_burst(scene, traj, cam, count, t_start=0.0, settings=None):
    """Renders ``count`` sharp frames at uniform times across the exposure of ``traj``."""
    if count < 1:
        raise ValueError("A burst needs at least one frame")
    frames = []
    for u in virtual_parameters(count):
        t = t_start + u * traj.exposure
        image = render(scene, traj.pose(u), cam, settings or RenderSettings())
        frames.append((t, ImageBuffer(image.pixels, timestamp=t, role=ImageRole.SHARP)))
    return frames


def average_frames(frames):
    """Pixel-wise arithmetic mean of ``frames`` (ImageBuffers or ``(t, ImageBuffer)`` pairs)."""
    images = [f[1] if isinstance(f, tuple) else f for f in frames]
    if not images:
        raise ValueError("Cannot average an empty frame list")
    shape = images[0].shape
    total = np.zeros(shape)
    for image in images:
        if image.shape != shape:
            raise ShapeMismatchError(f"Frame shape {image.shape} differs from {shape}")
        total += image.pixels
    stamps = [i.timestamp for i in images if i.timestamp is not None]
    exposure = (min(stamps), max(stamps)) if len(stamps) == len(images) else None
    return ImageBuffer(total / len(images), exposure=exposure, role=ImageRole.OBSERVED)


def log_intensity(pixels, per_channel=False, epsilon=EPSILON):
    values = np.asarray(pixels, dtype=np.float64)
    if not per_channel:
        values = luminance(values)
    return np.log(np.maximum(values, epsilon))


def _step_events(ref, start, end, t0, t1, threshold):
    """Threshold crossings of a linear log ramp ``start -> end`` against ``ref``."""
    diff = end - ref
    counts = np.floor(np.abs(diff) / threshold + CROSSING_TOLERANCE).astype(np.int64)
    flat = np.flatnonzero(counts)
    if len(flat) == 0:
        return ref, None
    n = counts.ravel()[flat]
    sign = np.sign(diff.ravel()[flat]).astype(np.int64)
    pixel = np.repeat(flat, n)
    offsets = np.cumsum(n) - n
    j = np.arange(n.sum()) - np.repeat(offsets, n) + 1
    p = np.repeat(sign, n)
    level = ref.ravel()[pixel] + p * j * threshold
    slope = end.ravel()[pixel] - start.ravel()[pixel]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(slope != 0.0, (level - start.ravel()[pixel]) / slope, 1.0)
    t = t0 + np.clip(s, 0.0, 1.0) * (t1 - t0)
    ref = ref.copy()
    ref.ravel()[flat] += sign * n * threshold
    return ref, (t, pixel, p)


def generate_events(burst, threshold=DEFAULT_THRESHOLD, per_channel=False, epsilon=EPSILON):
    """Simulates events between consecutive frames of a time-sorted burst.

    Every pixel keeps a reference log intensity, initialised from the first
    frame; one event is emitted per full ``threshold`` crossing and the
    reference moves by ``p * threshold``. Event times are interpolated
    linearly between the two frame times.

    Raises:
        EventStreamError: if frame timestamps are not strictly increasing.
    """
    if not threshold > 0.0:
        raise EventStreamError("Event threshold must be positive")
    burst = list(burst)
    if not burst:
        raise ValueError("Cannot generate events from an empty burst")
    times = np.array([t for t, _ in burst], dtype=np.float64)
    if np.any(np.diff(times) <= 0.0):
        raise EventStreamError("Burst timestamps must be strictly increasing")

    height, width = burst[0][1].shape[:2]
    logs = [log_intensity(frame.pixels, per_channel, epsilon) for _, frame in burst]
    ref = logs[0].copy()
    chunks = []
    for k in range(len(burst) - 1):
        ref, chunk = _step_events(ref, logs[k], logs[k + 1], times[k], times[k + 1], threshold)
        if chunk is not None:
            chunks.append(chunk)

    window = (float(times[0]), float(times[-1]))
    if not chunks:
        return EventStream(None, threshold, window, per_channel)
    t = np.concatenate([c[0] for c in chunks])
    pixel = np.concatenate([c[1] for c in chunks])
    p = np.concatenate([c[2] for c in chunks])
    order = np.argsort(t, kind="stable")
    t, pixel, p = t[order], pixel[order], p[order]
    if per_channel:
        pixel, c = np.divmod(pixel, 3)
    y, x = np.divmod(pixel, width)
    columns = {"t": t, "x": x, "y": y, "p": p}
    if per_channel:
        columns["c"] = c
    return EventStream(pl.DataFrame(columns), threshold, window, per_channel)


def bin_edges(stream, b):
    return stream.t_start + np.arange(b + 1) / b * stream.duration


def bin_centres(stream, b):
    edges = bin_edges(stream, b)
    return 0.5 * (edges[:-1] + edges[1:])


def bin_events(stream, b):
    """Splits ``stream`` into ``b`` equal-duration bins with closed right edges.

    Events exactly at ``t_start`` go to the first bin. Events outside the
    stream window belong to no bin and are dropped.
    """
    if b < 1:
        raise ValueError("At least one bin is required")
    edges = bin_edges(stream, b)
    df = stream.df.filter((pl.col("t") >= stream.t_start) & (pl.col("t") <= stream.t_end))
    t = df["t"].to_numpy()
    # in-window only; the clip absorbs rounding of the last edge
    index = np.clip(np.searchsorted(edges, t, side="left"), 1, b) - 1
    df = df.with_columns(pl.Series("bin", index))
    return [
        stream.with_df(df.filter(pl.col("bin") == k).drop("bin"), (edges[k], edges[k + 1]))
        for k in range(b)
    ]


def concatenate_streams(streams, window=None):
    streams = list(streams)
    if not streams:
        raise ValueError("No streams to concatenate")
    first = streams[0]
    df = pl.concat([s.df for s in streams]).sort("t", maintain_order=True)
    if window is None:
        window = (min(s.t_start for s in streams), max(s.t_end for s in streams))
    return EventStream(df, first.threshold, window, first.per_channel)
