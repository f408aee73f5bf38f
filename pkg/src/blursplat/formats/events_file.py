"""
Event text files: a ``# threshold=... t_start=... t_end=...`` header, then
one ``t x y p`` line per event in ascending time (``t x y p c`` for
per-channel streams).
"""

from pathlib import Path

import polars as pl

from ..eventsim import EventStream, EventStreamError

BASE_COLUMNS = ["t", "x", "y", "p"]


def write_events(path, stream):
    columns = BASE_COLUMNS + (["c"] if stream.per_channel else [])
    header = (
        f"# threshold={stream.threshold!r} t_start={stream.t_start!r} "
        f"t_end={stream.t_end!r} columns={','.join(columns)}\n"
    )
    path = Path(path)
    with open(path, "wb") as f:
        f.write(header.encode())
        stream.df.select(columns).write_csv(
            f, separator=" ", include_header=False, float_precision=None
        )


def _parse_header(line):
    fields = dict(item.split("=", 1) for item in line.lstrip("#").split())
    try:
        return (
            float(fields["threshold"]),
            (float(fields["t_start"]), float(fields["t_end"])),
            fields.get("columns", ",".join(BASE_COLUMNS)).split(","),
        )
    except (KeyError, ValueError) as e:
        raise EventStreamError(f"Malformed event file header: {line.strip()}") from e


def read_events(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Event file not found: {path}")
    with open(path) as f:
        first = f.readline()
        has_data = bool(f.readline().strip())
    if not first.startswith("#"):
        raise EventStreamError(f"Event file {path} lacks its header line")
    threshold, window, columns = _parse_header(first)
    per_channel = "c" in columns
    if not has_data:
        return EventStream(None, threshold, window, per_channel)
    try:
        df = pl.read_csv(
            path,
            separator=" ",
            has_header=False,
            comment_prefix="#",
            new_columns=columns,
        )
        return EventStream(df, threshold, window, per_channel)
    except pl.exceptions.PolarsError as e:
        raise EventStreamError(f"Malformed event file {path}: {e}") from e
