"""
Evaluate a checkpoint on a dataset's test views and training poses.
"""

from pathlib import Path

from . import EXIT_OK, EXIT_USAGE, render_settings, validate_output
from ..dataset import load_dataset
from ..formats.tum import read_tum
from ..optimizer import checkpoint_load
from ..pipeline import evaluate


def configure(parser):
    parser.add_argument("checkpoint", type=str, help="Checkpoint file.")
    parser.add_argument("dataset", type=str, help="Dataset folder the checkpoint was trained on.")
    parser.add_argument("out", type=str, help="Output folder for report.csv, ape.csv and report.txt.")
    parser.add_argument("--blur-level", type=int, default=7, help="Blur level trained on (default: 7).")
    parser.add_argument("--initial-poses", type=str, help="TUM file with the initial poses, for the initial APE.")


def run(args):
    out = Path(args.out)
    error = validate_output(out)
    if error:
        print(error)
        return EXIT_USAGE

    state = checkpoint_load(args.checkpoint, settings=render_settings(args))
    dataset = load_dataset(args.dataset)
    dataset.check_level(args.blur_level)
    initial = read_tum(args.initial_poses)[1] if args.initial_poses else None
    report = evaluate(state, dataset, args.blur_level, initial)
    report.write(out)
    print(report.to_text())
    return EXIT_OK
