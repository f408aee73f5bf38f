"""
Line-oriented ``key=value`` run logs.
"""

from pathlib import Path

from tqdm import tqdm


def _format(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value).replace(" ", "_")


class RunLog:
    """Echoes records through ``tqdm.write`` and appends them to ``run.log``."""

    def __init__(self, directory=None, echo=True):
        self.path = Path(directory) / "run.log" if directory is not None else None
        self.echo = echo
        self.records = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def log(self, stage, **fields):
        line = " ".join([f"stage={stage}"] + [f"{k}={_format(v)}" for k, v in fields.items()])
        self.records.append(line)
        if self.echo:
            tqdm.write(line)
        if self.path is not None:
            with open(self.path, "a") as f:
                f.write(line + "\n")
        return line

    def stages(self):
        """Stage names in the order they were first logged."""
        seen = []
        for line in self.records:
            stage = line.split(" ", 1)[0].split("=", 1)[1]
            if stage not in seen:
                seen.append(stage)
        return seen


def parse_record(line):
    return dict(item.split("=", 1) for item in line.split())
