"""
Deblur a dataset's blurred views, or a single blurred image, with their events.
"""

from pathlib import Path

import polars as pl

from . import EXIT_OK, EXIT_USAGE, validate_output
from ..dataset import DatasetError, load_dataset
from ..edi import EdiConfig, edi_deblur, edi_init_views
from ..formats.events_file import read_events
from ..formats.images import read_image, write_image
from ..metrics import psnr
from ..renderer import ImageRole


def configure(parser):
    parser.add_argument("dataset", type=str, nargs="?", help="Dataset folder.")
    parser.add_argument("out", type=str, nargs="?", help="Output folder for the deblurred images.")
    parser.add_argument("--blur", type=str, help="Single blurred image (PNG or NPY) instead of a dataset.")
    parser.add_argument("--events", type=str, help="Event file covering the exposure of --blur.")
    parser.add_argument("--out", dest="out_image", type=str, help="Output image for --blur.")
    parser.add_argument("--blur-level", type=int, default=7, help="Blur level to deblur (default: 7).")
    parser.add_argument("--bins", type=int, default=13, help="Event bins per exposure (default: 13).")
    parser.add_argument(
        "--theta",
        type=float,
        help="Contrast threshold used for deblurring (default: the threshold the events were recorded with).",
    )
    parser.add_argument(
        "--latent-time",
        "--latent",
        type=float,
        default=0.5,
        help="Reconstructed time as a fraction of the exposure (default: 0.5).",
    )
    parser.add_argument(
        "--steps",
        action="store_true",
        help="Use integer event counts instead of levels interpolated between events.",
    )


def edi_config(args, threshold):
    theta = args.theta if args.theta is not None else threshold
    return EdiConfig(theta, args.bins, args.latent_time, interpolate=not args.steps)


def run_single(args):
    if not args.events or not args.out_image:
        print("Error: --blur needs --events and --out.")
        return EXIT_USAGE
    blur = read_image(args.blur, ImageRole.OBSERVED)
    stream = read_events(args.events)
    latent = edi_deblur(blur, stream, edi_config(args, stream.threshold))
    write_image(args.out_image, latent)
    print(f"Deblurred image written to {Path(args.out_image).with_suffix('.png')}")
    return EXIT_OK


def run(args):
    if args.blur:
        return run_single(args)
    if not args.dataset or not args.out:
        print("Error: Give a dataset and an output folder, or --blur, --events and --out.")
        return EXIT_USAGE
    out = Path(args.out)
    error = validate_output(out)
    if error:
        print(error)
        return EXIT_USAGE

    dataset = load_dataset(args.dataset)
    if not dataset.has_events:
        raise DatasetError(f"Dataset {dataset.root} has no event stream")
    cfg = edi_config(args, dataset.settings.threshold)
    views = dataset.train_views
    pairs = [(dataset.blurred(v, args.blur_level), dataset.view_events(v, args.blur_level)) for v in views]
    results = edi_init_views(pairs, cfg)

    rows = []
    for view, (blur, _), result in zip(views, pairs, results):
        write_image(out / f"view_{view:03d}", result.image)
        sharp = dataset.sharp_mid(view, args.blur_level)
        rows.append({
            "view": view,
            "psnr_blurred": psnr(blur, sharp),
            "psnr_deblurred": psnr(result.image, sharp),
            "degraded": result.degraded,
        })
    df = pl.DataFrame(rows)
    df.write_csv(out / "edi.csv", float_precision=4)
    print(df)
    return EXIT_OK
