"""
Generate a procedural toy dataset: sharp bursts, blur levels, events and ground truth.
"""

from pathlib import Path

from . import EXIT_OK, EXIT_USAGE, UsageError, load_scene_config, render_settings, validate_destination
from ..dataset import generate_dataset


def configure(parser):
    parser.add_argument("out", type=str, help="Destination folder for the dataset.")
    parser.add_argument(
        "--blur-levels",
        type=int,
        nargs="+",
        default=[1, 3, 5, 7, 9, 11],
        help="Number of averaged burst frames per blur level (default: 1 3 5 7 9 11).",
    )
    parser.add_argument("--burst-size", type=int, default=11, help="Sharp frames per burst (default: 11).")
    parser.add_argument("--exposure", type=float, default=1.0, help="Burst duration in seconds (default: 1.0).")
    parser.add_argument("--no-events", action="store_true", help="Do not simulate events.")
    parser.add_argument("--threshold", type=float, default=0.2, help="Event contrast threshold (default: 0.2).")
    parser.add_argument("--per-channel", action="store_true", help="Emit events per colour channel.")
    parser.add_argument("--views", type=int, help="Training views (default: 20).")
    parser.add_argument("--test-views", type=int, help="Novel test views (default: 4).")
    parser.add_argument("--gaussians", type=int, help="Ground-truth Gaussian count (default: 200).")
    parser.add_argument("--size", type=int, nargs=2, metavar=("WIDTH", "HEIGHT"), help="Image size (default: 64 64).")


def run(args):
    destination = Path(args.out)

    error = validate_destination(destination)
    if error:
        print(error)
        return EXIT_USAGE

    scene_cfg = load_scene_config(args)
    for name in ("views", "test_views", "gaussians"):
        if getattr(args, name) is not None:
            setattr(scene_cfg, name, getattr(args, name))
    if args.size:
        scene_cfg.width, scene_cfg.height = args.size

    try:
        generate_dataset(
            destination,
            scene_cfg,
            blur_levels=args.blur_levels,
            events=not args.no_events,
            threshold=args.threshold,
            per_channel=args.per_channel,
            burst_size=args.burst_size,
            exposure=args.exposure,
            seed=args.seed,
            settings=render_settings(args),
        )
    except ValueError as e:
        raise UsageError(str(e)) from e
    return EXIT_OK
