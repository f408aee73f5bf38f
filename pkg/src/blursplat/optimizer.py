"""
Joint optimisation of the Gaussian scene and per-view camera trajectories.

Every view is supervised with its observed blurred image: the trajectory's
virtual poses are rendered and averaged, the photometric loss is
backpropagated to the Gaussians and to the virtual-pose twists, and the
twist gradients are chained to the trajectory's control points. Gaussian
positions additionally receive opacity-gated Langevin noise and
low-opacity Gaussians are periodically relocated onto live ones.
"""

import dataclasses
import io
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import polars as pl
import toml
from tqdm import tqdm

from .edi import DeblurredImage
from .liegroup import SE3Pose
from .metrics import ape, psnr, ssim_with_gradient
from .renderer import (
    ImageBuffer,
    ImageRole,
    RenderSettings,
    ShapeMismatchError,
    render_backward,
    render_blurred,
)
from .scene import PARAMETER_GROUPS, Camera, SceneModel, logit, sigmoid
from .trajectory import TRAJECTORY_KINDS, virtual_parameters

MODES = ("gems", "gems-e", "no-mcmc", "no-trajopt")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-15
SGLD_GATE_SLOPE = 100.0
CHECKPOINT_MAGIC = b"GMSK"
CHECKPOINT_VERSION = 1
OPACITY_CLAMP = 1e-6


class SupervisionError(Exception):
    """Raised when an image that is not an observation is used as a training target."""
    pass


class CheckpointError(Exception):
    """Raised for corrupt, version-mismatched or incompatible checkpoints."""
    pass


class NumericalError(Exception):
    """Raised when a parameter group or its gradient stops being finite."""

    def __init__(self, group, values, stats):
        super().__init__(
            f"Non-finite values in {group}: "
            + ", ".join(f"{k}={v}" for k, v in stats.items())
        )
        self.group = group
        self.values = values
        self.stats = stats

    def dump(self, path):
        np.savez(path, values=self.values, group=np.array(self.group), **{
            k: np.array(v) for k, v in self.stats.items()
        })


def _guard(group, values):
    values = np.asarray(values)
    finite = np.isfinite(values)
    if not np.all(finite):
        stats = {
            "nan": int(np.isnan(values).sum()),
            "inf": int(np.isinf(values).sum()),
            "max_abs_finite": float(np.abs(values[finite]).max()) if finite.any() else 0.0,
        }
        raise NumericalError(group, values, stats)


@dataclass
class OptimConfig:
    n_virtual: int = 15
    control_points: int = 9
    trajectory: str = "bezier"
    iterations: int = 7000
    lambda_dssim: float = 0.2
    lr_pose: float = 1e-3
    # position rates are multiplied by the scene extent
    lr_means: float = 1.6e-4
    lr_means_final: float = 1.6e-6
    lr_quats: float = 1e-3
    lr_scales: float = 5e-3
    lr_opacity: float = 5e-2
    lr_colors: float = 2.5e-3
    sgld_noise: float = 5e5
    sgld_covariance_shaped: bool = True
    mcmc: bool = True
    n_max: int = 1000
    relocate_every: int = 100
    relocate_opacity_eps: float = 0.005
    growth_rate: float = 0.05
    opacity_reg: float = 0.0
    scale_reg: float = 0.0
    views_per_step: int = 1
    log_every: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.n_virtual < 1:
            raise ValueError("n_virtual must be at least 1")
        if self.control_points < 2:
            raise ValueError("control_points must be at least 2")
        if not 0.0 <= self.lambda_dssim <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.trajectory not in TRAJECTORY_KINDS:
            raise ValueError(f"Unknown trajectory kind: {self.trajectory}")
        if self.n_max < 1 or self.iterations < 0 or self.views_per_step < 1:
            raise ValueError("n_max and views_per_step must be positive, iterations nonnegative")
        if self.relocate_every < 1 or self.log_every < 1:
            raise ValueError("relocate_every and log_every must be positive")

    @classmethod
    def from_dict(cls, data):
        data = {("lambda_dssim" if k == "lambda" else k): v for k, v in data.items() if not isinstance(v, dict)}
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ValueError(f"Unknown configuration keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path):
        """Reads top-level keys of a TOML file; tables such as ``[scene]`` are skipped."""
        with open(path, "rb") as f:
            return cls.from_dict(tomllib.load(f))

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **overrides):
        return dataclasses.replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def for_mode(self, mode):
        """Configuration of an ablation arm."""
        if mode not in MODES:
            raise ValueError(f"Unknown mode: {mode}")
        if mode == "no-mcmc":
            return self.replace(mcmc=False)
        if mode == "no-trajopt":
            return self.replace(lr_pose=0.0)
        return self


class Adam:
    """Adam moments per named parameter group; update rows can be reset or appended."""

    def __init__(self, betas=ADAM_BETAS, eps=ADAM_EPS):
        self.betas = betas
        self.eps = eps
        self.m = {}
        self.v = {}
        self.steps = {}

    def step(self, key, grad, lr):
        b1, b2 = self.betas
        m = self.m.get(key, np.zeros_like(grad))
        v = self.v.get(key, np.zeros_like(grad))
        t = self.steps.get(key, 0) + 1
        m = b1 * m + (1.0 - b1) * grad
        v = b2 * v + (1.0 - b2) * grad * grad
        self.m[key], self.v[key], self.steps[key] = m, v, t
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        return lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def reset_rows(self, key, rows):
        for moments in (self.m, self.v):
            if key in moments:
                moments[key][rows] = 0.0

    def append_rows(self, key, count):
        for moments in (self.m, self.v):
            if key in moments:
                current = moments[key]
                moments[key] = np.concatenate([current, np.zeros((count,) + current.shape[1:])])

    def arrays(self):
        out = {}
        for key in self.m:
            out[f"adam_m/{key}"] = self.m[key]
            out[f"adam_v/{key}"] = self.v[key]
        return out

    def restore(self, arrays, steps):
        for name, values in arrays.items():
            kind, key = name.split("/", 1)
            target = self.m if kind == "adam_m" else self.v
            target[key] = np.array(values, dtype=np.float64)
        self.steps = {k: int(v) for k, v in steps.items()}


@dataclass(frozen=True, eq=False)
class TrainView:
    """One supervised view: trajectory slot, observed blurred image and optional ground-truth pose."""

    index: int
    target: ImageBuffer
    gt_pose: SE3Pose | None = None

    def __post_init__(self):
        if isinstance(self.target, DeblurredImage):
            raise SupervisionError("Deblurred images may only initialise poses, not supervise training")
        if not isinstance(self.target, ImageBuffer):
            raise SupervisionError(f"Training target must be an ImageBuffer, got {type(self.target).__name__}")
        if self.target.role == ImageRole.DEBLURRED:
            raise SupervisionError("Deblurred images may only initialise poses, not supervise training")


class TrainState:
    def __init__(self, scene, trajectories, config, camera, settings=None, seed=None,
                 iteration=0, extent=None, adam=None, rng=None):
        self.scene = scene
        self.trajectories = list(trajectories)
        self.config = config
        self.camera = camera
        self.settings = settings or RenderSettings()
        self.iteration = iteration
        self.extent = float(extent) if extent is not None else scene.extent()
        self.adam = adam or Adam()
        self.rng = rng or np.random.default_rng(config.seed if seed is None else seed)
        self.last_loss = float("nan")
        self.last_psnr = float("nan")
        self.last_relocated = 0
        if scene.capacity < config.n_max:
            self.scene = scene.with_capacity(config.n_max)

    def means_lr(self):
        """Exponential decay from ``lr_means`` to ``lr_means_final`` over the run, times the extent."""
        cfg = self.config
        if cfg.lr_means <= 0.0:
            return 0.0
        progress = min(self.iteration / max(cfg.iterations, 1), 1.0)
        start, end = cfg.lr_means, max(cfg.lr_means_final, 1e-30)
        return float(np.exp((1.0 - progress) * np.log(start) + progress * np.log(end))) * self.extent

    def learning_rates(self):
        cfg = self.config
        return {
            "means": self.means_lr(),
            "quats": cfg.lr_quats,
            "log_scales": cfg.lr_scales,
            "opacity_logits": cfg.lr_opacity,
            "colors": cfg.lr_colors,
        }

    def mid_poses(self):
        u = 0.5 if self.config.n_virtual > 1 else 0.0
        return [traj.pose(u) for traj in self.trajectories]


def photometric_loss(pred, target, lam=0.2):
    """``(1 - lam) L1 + lam (1 - SSIM)`` and its gradient with respect to ``pred``."""
    p = pred.pixels if isinstance(pred, ImageBuffer) else np.asarray(pred, dtype=np.float64)
    t = target.pixels if isinstance(target, ImageBuffer) else np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeMismatchError(f"Prediction {p.shape} and target {t.shape} differ")
    diff = p - t
    l1 = float(np.mean(np.abs(diff)))
    grad = (1.0 - lam) * np.sign(diff) / diff.size
    loss = (1.0 - lam) * l1
    if lam > 0.0:
        s, ds = ssim_with_gradient(p, t)
        loss += lam * (1.0 - s)
        grad = grad - lam * ds
    return loss, grad


def _regularisers(scene, cfg):
    grads = {}
    loss = 0.0
    n = max(len(scene), 1)
    if cfg.opacity_reg > 0.0:
        o = scene.opacities
        loss += cfg.opacity_reg * float(o.mean())
        grads["opacity_logits"] = cfg.opacity_reg * o * (1.0 - o) / n
    if cfg.scale_reg > 0.0:
        s = scene.scales
        loss += cfg.scale_reg * float(s.mean())
        grads["log_scales"] = cfg.scale_reg * s / s.size
    return loss, grads


def compute_gradients(state, views):
    """Mean loss over ``views`` with Gaussian and control-point gradients."""
    cfg = state.config
    scene = state.scene
    grads = {name: np.zeros_like(getattr(scene, name)) for name in PARAMETER_GROUPS}
    pose_grads = {}
    total = 0.0
    quality = 0.0
    us = virtual_parameters(cfg.n_virtual)
    for view in views:
        traj = state.trajectories[view.index]
        pred, poses = render_blurred(scene, traj, state.camera, cfg.n_virtual, state.settings)
        loss, d_pred = photometric_loss(pred, view.target, cfg.lambda_dssim)
        total += loss
        quality += psnr(pred, view.target)
        g = render_backward(scene, poses, state.camera, d_pred, state.settings)
        for name, values in g.groups().items():
            grads[name] += values
        jacobians = np.stack([traj.pose_and_jacobians(u)[1] for u in us])
        pose_grads[view.index] = np.einsum("ijab,ia->jb", jacobians, g.pose_twists) / len(views)
    for name in grads:
        grads[name] /= len(views)
    reg_loss, reg_grads = _regularisers(scene, cfg)
    for name, values in reg_grads.items():
        grads[name] += values
    return total / len(views) + reg_loss, quality / len(views), grads, pose_grads


def sgld_noise(state, lr):
    """Langevin perturbation of the means.

    The plain rule is isotropic ``N(0, (lr * sgld_noise)^2)``. The shaped rule
    multiplies by each Gaussian's covariance and gates it by opacity, so only
    nearly transparent Gaussians move.
    """
    cfg = state.config
    scene = state.scene
    noise = state.rng.normal(size=scene.means.shape) * (lr * cfg.sgld_noise)
    if cfg.sgld_covariance_shaped:
        gate = sigmoid(-SGLD_GATE_SLOPE * (scene.opacities - cfg.relocate_opacity_eps))
        noise = np.einsum("nij,nj->ni", scene.covariances(), noise * gate[:, None])
    return noise


def train_step(state, views):
    """One optimisation step on ``views``; mutates and returns ``state``.

    Raises:
        NumericalError: if a gradient or an updated parameter group is not finite.
    """
    cfg = state.config
    scene = state.scene
    loss, quality, grads, pose_grads = compute_gradients(state, views)
    for name, values in grads.items():
        _guard(f"grad/{name}", values)
    for index, values in pose_grads.items():
        _guard(f"grad/pose_{index}", values)

    rates = state.learning_rates()
    for name in PARAMETER_GROUPS:
        if rates[name] > 0.0:
            setattr(scene, name, getattr(scene, name) - state.adam.step(name, grads[name], rates[name]))
    scene.normalize_quaternions()
    if cfg.mcmc and cfg.sgld_noise > 0.0 and len(scene):
        scene.means = scene.means + sgld_noise(state, rates["means"])
    for name in PARAMETER_GROUPS:
        _guard(name, getattr(scene, name))

    if cfg.lr_pose > 0.0:
        for index, values in pose_grads.items():
            delta = -state.adam.step(f"pose_{index}", values, cfg.lr_pose)
            state.trajectories[index] = state.trajectories[index].retract(delta)
            _guard(f"pose_{index}", [p.as_matrix() for p in state.trajectories[index].control_points])

    state.iteration += 1
    state.last_loss = loss
    state.last_psnr = quality
    return state


def _split_onto(state, sources):
    """Opacity-preserving split of each source over itself and its copies.

    A source sampled ``k`` times ends up with ``k + 1`` identical Gaussians of
    opacity ``1 - (1 - o)^(1 / (k + 1))``. Returns the parameter rows of the copies.
    """
    scene = state.scene
    counts = np.bincount(sources, minlength=len(scene))
    unique = np.flatnonzero(counts)
    o = sigmoid(scene.opacity_logits[unique])
    o_new = 1.0 - np.power(1.0 - o, 1.0 / (counts[unique] + 1.0))
    scene.opacity_logits[unique] = logit(np.clip(o_new, OPACITY_CLAMP, 1.0 - OPACITY_CLAMP))
    for name in PARAMETER_GROUPS:
        state.adam.reset_rows(name, unique)
    return {name: getattr(scene, name)[sources].copy() for name in PARAMETER_GROUPS}


def mcmc_relocate(state):
    """Moves Gaussians below ``relocate_opacity_eps`` onto live ones sampled by opacity.

    Returns the number of relocated Gaussians.
    """
    cfg = state.config
    scene = state.scene
    opacity = scene.opacities
    dead = np.flatnonzero(opacity < cfg.relocate_opacity_eps)
    live = np.flatnonzero(opacity >= cfg.relocate_opacity_eps)
    state.last_relocated = 0
    if len(dead) == 0 or len(live) == 0:
        return 0
    weights = opacity[live] / opacity[live].sum()
    sources = state.rng.choice(live, size=len(dead), replace=True, p=weights)
    copies = _split_onto(state, sources)
    for name in PARAMETER_GROUPS:
        getattr(scene, name)[dead] = copies[name]
        state.adam.reset_rows(name, dead)
    state.last_relocated = len(dead)
    return len(dead)


def mcmc_grow(state):
    """Adds ``growth_rate`` more Gaussians, split off live ones, up to ``n_max``."""
    cfg = state.config
    scene = state.scene
    n = len(scene)
    target = min(cfg.n_max, scene.capacity, int(n * (1.0 + cfg.growth_rate)))
    add = target - n
    if add <= 0 or n == 0:
        return 0
    opacity = scene.opacities
    sources = state.rng.choice(n, size=add, replace=True, p=opacity / opacity.sum())
    copies = _split_onto(state, sources)
    scene.append(copies)
    for name in PARAMETER_GROUPS:
        state.adam.append_rows(name, add)
    return add


def train(state, views, iterations=None, log=None, progress=True):
    """Runs the loop until ``iterations`` (default ``config.iterations``); returns the history."""
    cfg = state.config
    end = cfg.iterations if iterations is None else iterations
    views = list(views)
    rows = []
    gt = [(v.index, v.gt_pose) for v in views if v.gt_pose is not None]
    steps = range(state.iteration, end)
    for _ in tqdm(steps, desc="Training", disable=not progress):
        relocated = 0
        # relocation runs at the start of a step so a resumed run repeats it
        if cfg.mcmc and state.iteration > 0 and state.iteration % cfg.relocate_every == 0:
            relocated = mcmc_relocate(state)
            mcmc_grow(state)
        batch = state.rng.choice(len(views), size=min(cfg.views_per_step, len(views)), replace=False)
        train_step(state, [views[i] for i in batch])
        if state.iteration % cfg.log_every == 0 or state.iteration == end:
            row = {
                "iteration": state.iteration,
                "loss": state.last_loss,
                "psnr": state.last_psnr,
                "ape": float("nan"),
                "n_gaussians": len(state.scene),
                "n_relocated": relocated,
            }
            if gt:
                mid = state.mid_poses()
                row["ape"] = ape([mid[i] for i, _ in gt], [p for _, p in gt]).rmse
            rows.append(row)
            if log is not None:
                log.log("train", **row)
    schema = {
        "iteration": pl.Int64, "loss": pl.Float64, "psnr": pl.Float64,
        "ape": pl.Float64, "n_gaussians": pl.Int64, "n_relocated": pl.Int64,
    }
    return pl.DataFrame(rows, schema=schema)


def _rng_state(rng):
    state = rng.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "state": format(state["state"]["state"], "x"),
        "inc": format(state["state"]["inc"], "x"),
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def _restore_rng(meta):
    rng = np.random.default_rng()
    rng.bit_generator.state = {
        "bit_generator": meta["bit_generator"],
        "state": {"state": int(meta["state"], 16), "inc": int(meta["inc"], 16)},
        "has_uint32": meta["has_uint32"],
        "uinteger": meta["uinteger"],
    }
    return rng


def checkpoint_save(state, path):
    """Writes ``GMSK``, a u32 version and u32 metadata length, TOML metadata, then an npz payload."""
    trajectories = state.trajectories
    meta = {
        "version": CHECKPOINT_VERSION,
        "iteration": state.iteration,
        "extent": state.extent,
        "trajectory_kind": trajectories[0].kind if trajectories else state.config.trajectory,
        "exposures": [t.exposure for t in trajectories],
        "camera": state.camera.to_dict(),
        "config": state.config.to_dict(),
        "rng": _rng_state(state.rng),
        "adam_steps": dict(state.adam.steps),
    }
    arrays = {name: getattr(state.scene, name) for name in PARAMETER_GROUPS}
    arrays["capacity"] = np.array(state.scene.capacity)
    arrays["control_points"] = np.array(
        [[p.as_matrix() for p in t.control_points] for t in trajectories]
    ) if trajectories else np.zeros((0, 2, 4, 4))
    arrays.update(state.adam.arrays())
    payload = io.BytesIO()
    np.savez(payload, **arrays)
    meta_bytes = toml.dumps(meta).encode()
    header = np.array([CHECKPOINT_VERSION, len(meta_bytes)], dtype="<u4").tobytes()
    Path(path).write_bytes(CHECKPOINT_MAGIC + header + meta_bytes + payload.getvalue())


def checkpoint_load(path, n_max=None, settings=None):
    """Restores a :class:`TrainState`; ``n_max`` may raise the Gaussian capacity.

    Raises:
        CheckpointError: on a bad magic, version mismatch, corrupt payload or
            an ``n_max`` below the stored Gaussian count.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC or len(raw) < 12:
        raise CheckpointError(f"{path} is not a checkpoint")
    version, meta_length = (int(v) for v in np.frombuffer(raw[4:12], dtype="<u4"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"Checkpoint version {version} does not match {CHECKPOINT_VERSION}")
    try:
        meta = tomllib.loads(raw[12:12 + meta_length].decode())
        with np.load(io.BytesIO(raw[12 + meta_length:])) as npz:
            arrays = {k: npz[k] for k in npz.files}
    except Exception as e:
        raise CheckpointError(f"Corrupt checkpoint {path}: {e}") from e
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"Checkpoint metadata version {meta.get('version')} is not supported")

    config = OptimConfig.from_dict(meta["config"])
    count = len(arrays["means"])
    capacity = int(arrays["capacity"])
    if n_max is not None:
        if n_max < count:
            raise CheckpointError(f"n_max {n_max} is below the {count} stored Gaussians")
        config = config.replace(n_max=n_max)
        capacity = max(capacity, n_max)
    scene = SceneModel(*(arrays[name] for name in PARAMETER_GROUPS), capacity=capacity)
    kind = TRAJECTORY_KINDS[meta["trajectory_kind"]]
    trajectories = [
        kind(tuple(SE3Pose.from_matrix(m) for m in points), exposure)
        for points, exposure in zip(arrays["control_points"], meta["exposures"])
    ]
    adam = Adam()
    adam.restore({k: v for k, v in arrays.items() if k.startswith("adam_")}, meta["adam_steps"])
    return TrainState(
        scene, trajectories, config, Camera.from_dict(meta["camera"]), settings=settings,
        iteration=int(meta["iteration"]), extent=meta["extent"], adam=adam,
        rng=_restore_rng(meta["rng"]),
    )
