"""
Estimate initial poses and a point cloud for the training views.
"""

from pathlib import Path

from . import EXIT_OK, EXIT_USAGE, validate_output
from ..dataset import load_dataset
from ..pipeline import init_poses, write_init
from ..runlog import RunLog


def configure(parser):
    parser.add_argument("dataset", type=str, help="Dataset folder.")
    parser.add_argument("out", type=str, help="Output folder for poses_init.tum and points_init.ply.")
    parser.add_argument("--blur-level", type=int, default=7, help="Blur level of the input images (default: 7).")
    parser.add_argument("--events", action="store_true", help="Deblur the inputs with events first.")
    parser.add_argument("--points", type=int, help="Point count (default: ground-truth Gaussian count).")


def run(args):
    out = Path(args.out)
    error = validate_output(out)
    if error:
        print(error)
        return EXIT_USAGE

    dataset = load_dataset(args.dataset)
    result = init_poses(
        dataset, args.blur_level, args.events, seed=args.seed, points=args.points, log=RunLog(out)
    )
    write_init(result, out)
    if result.deblurred:
        print(f"{len(result.deblurred) - result.degraded} of {len(result.deblurred)} views deblurred")
    print(f"Initial poses written to {out / 'poses_init.tum'}")
    return EXIT_OK
