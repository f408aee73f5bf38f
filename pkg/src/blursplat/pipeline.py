"""
End-to-end pipelines over a generated dataset: pose initialisation, training
of each ablation arm, evaluation and rendering.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import polars as pl

from .dataset import DatasetError
from .edi import EdiConfig, edi_init_views
from .formats.images import write_image
from .formats.pointcloud import write_ply
from .formats.tum import write_tum
from .metrics import EvalReport, aligned_table, ape, psnr
from .optimizer import (
    CheckpointError,
    TrainState,
    TrainView,
    checkpoint_save,
    train,
)
from .renderer import RenderSettings, render
from .runlog import RunLog
from .sfm_init import (
    event_profile,
    initial_scene,
    initial_trajectories,
    jitter_for_profile,
    noise_profile,
    perturb_poses,
    project_colors,
    sample_pointcloud,
)


@dataclass(eq=False)
class InitResult:
    """Estimated mid-exposure poses and point cloud of the training views."""

    views: list
    poses: list
    points: object
    colors: object
    images: list
    profile: object
    deblurred: list = field(default_factory=list)
    edi_gain: float | None = None

    @property
    def degraded(self):
        return sum(d.degraded for d in self.deblurred)


def edi_gain(blurred, deblurred, sharp):
    """Mean PSNR of the EDI outputs minus that of the blurred inputs, both against the sharp frames."""
    before = np.mean([psnr(b, s) for b, s in zip(blurred, sharp)])
    after = np.mean([psnr(d.image, s) for d, s in zip(deblurred, sharp)])
    return float(after - before)


def init_poses(dataset, level, use_events=False, seed=0, points=None, edi_config=None, log=None):
    """Stands in for structure-from-motion on the blurred (or EDI-deblurred) views.

    With events the deblurred images colour the point cloud, and the pose
    noise follows how much sharper they really are than the blurred views:
    see ``event_profile``. Degraded views pass their blur through and add
    no gain.
    """
    log = log or RunLog(echo=False)
    dataset.check_level(level)
    views = dataset.train_views
    if not views:
        raise DatasetError(f"Dataset {dataset.root} has no training views")
    blurred = [dataset.blurred(v, level) for v in views]
    deblurred = []
    gain = None
    profile = noise_profile(level)
    images = blurred
    if use_events:
        if not dataset.has_events:
            raise DatasetError(f"Dataset {dataset.root} has no event stream")
        cfg = edi_config or EdiConfig(threshold=dataset.settings.threshold)
        streams = [dataset.view_events(v, level) for v in views]
        deblurred = edi_init_views(list(zip(blurred, streams)), cfg)
        images = [d.image for d in deblurred]
        gain = edi_gain(blurred, deblurred, [dataset.sharp_mid(v, level) for v in views])
        profile = event_profile(level, gain)
        log.log("edi", views=len(views), bins=cfg.bins, threshold=cfg.threshold,
                degraded=sum(d.degraded for d in deblurred), gain=gain)
    gt = [dataset.gt_mid_pose(v, level) for v in views]
    poses = perturb_poses(gt, profile, seed)
    gt_scene = dataset.gt_scene()
    count = points or len(gt_scene)
    cloud = sample_pointcloud(gt_scene, count, jitter_for_profile(profile), seed)
    colors = project_colors(cloud, images, poses, dataset.camera)
    log.log("init-poses", views=len(views), level=level, profile=profile.blur_level,
            points=len(cloud), ape=ape(poses, gt).rmse)
    return InitResult(views, poses, cloud, colors, images, profile, deblurred, gain)


def write_init(result, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_tum(out_dir / "poses_init.tum", result.views, result.poses)
    write_ply(out_dir / "points_init.ply", result.points, result.colors)
    for view, d in zip(result.views, result.deblurred):
        write_image(out_dir / "edi" / f"view_{view:03d}", d.image)


@dataclass(eq=False)
class TrainResult:
    state: TrainState
    history: pl.DataFrame
    report: EvalReport
    init: InitResult


def train_model(dataset, mode, config, level, out_dir=None, settings=None, iterations=None,
                points=None, progress=True, log=None):
    """Runs one pipeline variant: initialisation, training, evaluation.

    ``gems-e`` initialises from EDI outputs and still supervises every view
    with its blurred observation.
    """
    cfg = config.for_mode(mode)
    settings = settings or RenderSettings()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    log = log or RunLog(out_dir)
    use_events = mode == "gems-e"
    if use_events and not dataset.has_events:
        raise DatasetError(f"Mode gems-e needs events, but {dataset.root} has none")

    init = init_poses(dataset, level, use_events, seed=cfg.seed, points=points, log=log)
    scene = initial_scene(init.points, init.images, init.poses, dataset.camera, capacity=cfg.n_max)
    trajectories = initial_trajectories(init.poses, cfg.trajectory, cfg.control_points)
    views = [
        TrainView(i, dataset.blurred(v, level), dataset.gt_mid_pose(v, level))
        for i, v in enumerate(init.views)
    ]
    state = TrainState(scene, trajectories, cfg, dataset.camera, settings)
    log.log("train", mode=mode, views=len(views), gaussians=len(scene), n_virtual=cfg.n_virtual,
            trajectory=cfg.trajectory)
    history = train(state, views, iterations, log=log, progress=progress)
    report = evaluate(state, dataset, level, initial_poses=init.poses)
    log.log("eval", test_psnr=report.mean_psnr("test"), deblur_psnr=report.mean_psnr("deblur"),
            ape=report.ape.rmse, initial_ape=report.initial_ape.rmse)

    if out_dir is not None:
        checkpoint_save(state, out_dir / "checkpoint.gmsk")
        history.write_csv(out_dir / "history.csv", float_precision=6)
        write_tum(out_dir / "poses_final.tum", init.views, state.mid_poses())
        report.write(out_dir)
        render_test_views(state, dataset, out_dir / "renders")
    return TrainResult(state, history, report, init)


def _check_compatible(state, dataset):
    if state.camera != dataset.camera:
        raise CheckpointError("Checkpoint camera does not match the dataset camera")
    if len(state.trajectories) != len(dataset.train_views):
        raise CheckpointError(
            f"Checkpoint holds {len(state.trajectories)} trajectories, "
            f"dataset has {len(dataset.train_views)} training views"
        )


def evaluate(state, dataset, level, initial_poses=None):
    """Novel test views rendered at ground-truth poses and training views
    rendered at the estimated mid-exposure pose against the sharp mid frame."""
    _check_compatible(state, dataset)
    pairs = []
    for view, pose in zip(dataset.test_views, dataset.test_poses()):
        pairs.append((view, "test", render(state.scene, pose, state.camera, state.settings),
                      dataset.test_image(view)))
    mid = state.mid_poses()
    for i, view in enumerate(dataset.train_views):
        pairs.append((view, "deblur", render(state.scene, mid[i], state.camera, state.settings),
                      dataset.sharp_mid(view, level)))
    gt = [dataset.gt_mid_pose(v, level) for v in dataset.train_views]
    initial = ape(initial_poses, gt) if initial_poses is not None else None
    return EvalReport.from_images(pairs, ape(mid, gt), initial)


def render_poses(state, poses, out_dir, names=None):
    """Writes one PNG/NPY pair per pose and returns the rendered images."""
    out_dir = Path(out_dir)
    images = []
    for i, pose in enumerate(poses):
        image = render(state.scene, pose, state.camera, state.settings)
        name = names[i] if names is not None else i
        write_image(out_dir / f"view_{name:03d}", image)
        images.append(image)
    return images


def render_test_views(state, dataset, out_dir):
    return render_poses(state, dataset.test_poses(), out_dir, dataset.test_views)


ARM_PRESETS = {
    "modules": [
        {"arm": "gems", "mode": "gems"},
        {"arm": "no-mcmc", "mode": "no-mcmc"},
        {"arm": "no-trajopt", "mode": "no-trajopt"},
        {"arm": "gems-e", "mode": "gems-e"},
    ],
    "trajectory": [
        {"arm": f"traj-{kind}", "mode": "gems", "trajectory": kind}
        for kind in ("bezier", "linear", "spline")
    ],
    "virtual": [
        {"arm": f"n-{n}", "mode": "gems", "n_virtual": n} for n in (5, 10, 15, 20)
    ],
}

EXPERIMENT_SCHEMA = {
    "arm": pl.Utf8,
    "mode": pl.Utf8,
    "trajectory": pl.Utf8,
    "n_virtual": pl.Int64,
    "test_psnr": pl.Float64,
    "test_ssim": pl.Float64,
    "deblur_psnr": pl.Float64,
    "ape": pl.Float64,
    "initial_ape": pl.Float64,
}


def run_experiment(dataset, preset, config, level, out_dir, settings=None, iterations=None,
                   points=None, progress=True):
    """Trains every arm of ``preset`` and writes ``experiment.csv`` and ``experiment.txt``."""
    if preset not in ARM_PRESETS:
        raise ValueError(f"Unknown experiment preset: {preset}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for arm in ARM_PRESETS[preset]:
        if arm["mode"] == "gems-e" and not dataset.has_events:
            print(f"Warning: skipping arm {arm['arm']}, dataset has no events")
            continue
        overrides = {k: v for k, v in arm.items() if k not in ("arm", "mode")}
        cfg = config.replace(**overrides)
        result = train_model(dataset, arm["mode"], cfg, level, out_dir / arm["arm"], settings,
                             iterations, points=points, progress=progress)
        test = result.report.split("test")
        rows.append({
            "arm": arm["arm"],
            "mode": arm["mode"],
            "trajectory": cfg.trajectory,
            "n_virtual": cfg.n_virtual,
            "test_psnr": result.report.mean_psnr("test"),
            "test_ssim": float(test["ssim"].mean()) if test.height else float("nan"),
            "deblur_psnr": result.report.mean_psnr("deblur"),
            "ape": result.report.ape.rmse,
            "initial_ape": result.report.initial_ape.rmse,
        })
    df = pl.DataFrame(rows, schema=EXPERIMENT_SCHEMA)
    df.write_csv(out_dir / "experiment.csv", float_precision=6)
    (out_dir / "experiment.txt").write_text(aligned_table(df) + "\n")
    return df
