"""
Render a trained checkpoint at the poses of a TUM file or a dataset's test views.
"""

from pathlib import Path

from . import EXIT_OK, EXIT_USAGE, render_settings, validate_output
from ..dataset import load_dataset
from ..formats.tum import read_tum
from ..optimizer import checkpoint_load
from ..pipeline import render_poses


def configure(parser):
    parser.add_argument("checkpoint", type=str, help="Checkpoint file.")
    parser.add_argument("out", type=str, help="Output folder for the images.")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--poses", type=str, help="TUM file with camera poses.")
    source.add_argument("--dataset", type=str, help="Dataset whose test poses are rendered.")


def run(args):
    out = Path(args.out)
    error = validate_output(out)
    if error:
        print(error)
        return EXIT_USAGE

    state = checkpoint_load(args.checkpoint, settings=render_settings(args))
    if args.poses:
        _, poses = read_tum(args.poses)
        names = None
    else:
        dataset = load_dataset(args.dataset)
        poses, names = dataset.test_poses(), dataset.test_views
    render_poses(state, poses, out, names)
    print(f"Rendered {len(poses)} views to {out}")
    return EXIT_OK
