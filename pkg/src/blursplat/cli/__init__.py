"""
Command-line entry point for blursplat.

Every subcommand lives in its own module exposing ``configure(parser)`` and
``run(args)``; ``run`` returns the process exit code.
"""

import argparse
import sys
from pathlib import Path

from ..dataset import DatasetError, SceneConfig
from ..dataset_settings import DatasetNotFoundError
from ..edi import EdiError
from ..eventsim import EventStreamError
from ..formats.pointcloud import PointCloudFormatError
from ..formats.scene_file import SceneFormatError
from ..formats.tum import TumFormatError
from ..optimizer import CheckpointError, NumericalError, OptimConfig
from ..renderer import RenderSettings, ShapeMismatchError
from ..sfm_init import UnknownBlurLevelError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

DATA_ERRORS = (
    DatasetError,
    DatasetNotFoundError,
    SceneFormatError,
    TumFormatError,
    EventStreamError,
    PointCloudFormatError,
    CheckpointError,
    UnknownBlurLevelError,
    ShapeMismatchError,
    EdiError,
    FileNotFoundError,
)


class UsageError(Exception):
    """Raised for invalid command-line arguments or configuration files."""
    pass


class ArgumentParser(argparse.ArgumentParser):
    """Reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"Error: {message}\n")


def validate_destination(destination: Path) -> str | None:
    """
    Validate the destination folder for a new dataset.

    Returns:
        Error message if validation fails, None if valid.
    """
    if destination.exists() and not destination.is_dir():
        return f"Error: '{destination}' exists and is not a directory."

    if (destination / "camera.cfg").exists():
        return f"Error: A camera.cfg file already exists in '{destination}'."

    if destination.is_dir() and any(destination.iterdir()):
        return f"Error: Directory '{destination}' is not empty."

    return None


def validate_output(destination: Path) -> str | None:
    """Output folders may exist, but must not be files."""
    if destination.exists() and not destination.is_dir():
        return f"Error: '{destination}' exists and is not a directory."
    return None


def load_config(args):
    """Optimiser configuration from ``--config`` with ``--seed`` and command flags applied."""
    try:
        config = OptimConfig.load(args.config) if args.config else OptimConfig()
        overrides = {name: getattr(args, name, None) for name in OVERRIDES}
        overrides["seed"] = args.seed
        return config.replace(**overrides)
    except (ValueError, TypeError, OSError) as e:
        raise UsageError(f"Invalid configuration: {e}") from e


def load_scene_config(args):
    try:
        return SceneConfig.load(args.config) if args.config else SceneConfig()
    except (ValueError, TypeError, OSError) as e:
        raise UsageError(f"Invalid scene configuration: {e}") from e


def render_settings(args):
    return RenderSettings(threads=args.threads)


# OptimConfig fields settable from training flags
OVERRIDES = (
    "iterations",
    "n_virtual",
    "control_points",
    "trajectory",
    "lambda_dssim",
    "lr_pose",
    "sgld_noise",
    "n_max",
    "relocate_every",
    "views_per_step",
    "log_every",
)


def add_training_flags(parser):
    parser.add_argument("--blur-level", type=int, default=7, help="Blur level to train on (default: 7).")
    parser.add_argument("--iterations", type=int, help="Training iterations (default: 7000).")
    parser.add_argument("--n-virtual", type=int, help="Virtual cameras per view (default: 15).")
    parser.add_argument("--control-points", type=int, help="Trajectory control points (default: 9).")
    parser.add_argument(
        "--trajectory",
        choices=["bezier", "linear", "spline"],
        help="Trajectory representation (default: bezier).",
    )
    parser.add_argument("--lambda", dest="lambda_dssim", type=float, help="D-SSIM weight (default: 0.2).")
    parser.add_argument("--lr-pose", type=float, help="Pose learning rate (default: 1e-3).")
    parser.add_argument("--sgld-noise", type=float, help="Langevin noise scale (default: 5e5).")
    parser.add_argument("--n-max", type=int, help="Gaussian capacity (default: 1000).")
    parser.add_argument("--relocate-every", type=int, help="Relocation period in iterations (default: 100).")
    parser.add_argument("--views-per-step", type=int, help="Views per optimisation step (default: 1).")
    parser.add_argument("--log-every", type=int, help="Logging period in iterations (default: 100).")
    parser.add_argument("--points", type=int, help="Initial point count (default: ground-truth Gaussian count).")
    parser.add_argument("--no-progress", action="store_true", help="Hide progress bars.")


def common_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="Random seed (default: 0).")
    common.add_argument("--threads", type=int, default=1, help="Rendering threads (default: 1).")
    common.add_argument("--config", type=str, help="TOML configuration file.")
    return common


def build_parser():
    from . import edi, evaluate, experiment, generate, init_poses, render, train

    parser = ArgumentParser(
        prog="blursplat",
        description="Gaussian splatting from motion-blurred images and events.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)
    common = common_parser()
    for name, module in (
        ("generate", generate),
        ("init-poses", init_poses),
        ("train", train),
        ("render", render),
        ("edi", edi),
        ("eval", evaluate),
        ("experiment", experiment),
    ):
        sub = subparsers.add_parser(name, parents=[common], help=module.__doc__.strip().splitlines()[0])
        module.configure(sub)
        sub.set_defaults(run=module.run)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.run(args)
    except UsageError as e:
        print(f"Error: {e}")
        return EXIT_USAGE
    except DATA_ERRORS as e:
        print(f"Error: {e}")
        return EXIT_DATA
    except NumericalError as e:
        out = Path(getattr(args, "out", None) or ".")
        out.mkdir(parents=True, exist_ok=True)
        e.dump(out / "nan_dump.npz")
        print(f"Error: {e}")
        print(f"Diagnostic dump written to {out / 'nan_dump.npz'}")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    exit(main())
