"""
Run an ablation preset: module arms, trajectory representations or virtual-camera counts.
"""

from pathlib import Path

from . import EXIT_OK, EXIT_USAGE, add_training_flags, load_config, render_settings, validate_output
from ..dataset import load_dataset
from ..pipeline import ARM_PRESETS, run_experiment
from ..metrics import aligned_table


def configure(parser):
    parser.add_argument("dataset", type=str, help="Dataset folder.")
    parser.add_argument("out", type=str, help="Output folder; one subfolder per arm.")
    parser.add_argument(
        "--preset",
        choices=sorted(ARM_PRESETS),
        default="modules",
        help="Arms to run (default: modules).",
    )
    add_training_flags(parser)


def run(args):
    out = Path(args.out)
    error = validate_output(out)
    if error:
        print(error)
        return EXIT_USAGE

    config = load_config(args)
    dataset = load_dataset(args.dataset)
    df = run_experiment(
        dataset,
        args.preset,
        config,
        args.blur_level,
        out,
        render_settings(args),
        points=args.points,
        progress=not args.no_progress,
    )
    print(aligned_table(df))
    return EXIT_OK
