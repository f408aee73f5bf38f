"""
Train a scene and per-view trajectories on blurred observations.
"""

from pathlib import Path

from . import (
    EXIT_OK,
    EXIT_USAGE,
    add_training_flags,
    load_config,
    render_settings,
    validate_output,
)
from ..dataset import load_dataset
from ..optimizer import MODES
from ..pipeline import train_model


def configure(parser):
    parser.add_argument("dataset", type=str, help="Dataset folder.")
    parser.add_argument("out", type=str, help="Output folder for the checkpoint, logs and renders.")
    parser.add_argument("--mode", choices=MODES, default="gems", help="Pipeline variant (default: gems).")
    add_training_flags(parser)


def run(args):
    out = Path(args.out)
    error = validate_output(out)
    if error:
        print(error)
        return EXIT_USAGE

    config = load_config(args)
    dataset = load_dataset(args.dataset)
    result = train_model(
        dataset,
        args.mode,
        config,
        args.blur_level,
        out,
        render_settings(args),
        points=args.points,
        progress=not args.no_progress,
    )
    print(result.report.to_text())
    print(f"Checkpoint written to {out / 'checkpoint.gmsk'}")
    return EXIT_OK
