"""
Tile-based alpha-compositing rasteriser with an analytic backward pass.

All views of a blurred render are projected together. Each tile gathers the
(splat, pixel) pairs inside every splat's support ellipse and groups them by view
and pixel in depth order, so a pixel's composite is a fixed-order reduction
and the result does not depend on how tiles are scheduled across threads.
The backward pass recomputes the forward terms of each tile; the projection
chain rule then runs once over all views.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .scene import (
    DILATION,
    Z_NEAR,
    project_views,
    rotation_quaternion_jacobian,
    sigmoid,
    world_covariances,
)
from .trajectory import virtual_parameters


class ShapeMismatchError(Exception):
    """Raised when an image or gradient does not match the camera resolution."""
    pass


class ImageRole(Enum):
    RENDERED = "rendered"
    OBSERVED = "observed"
    SHARP = "sharp"
    DEBLURRED = "deblurred"


@dataclass(eq=False)
class ImageBuffer:
    """H x W x 3 linear radiance with optional exposure metadata."""

    pixels: np.ndarray
    timestamp: float | None = None
    exposure: tuple | None = None
    role: ImageRole = ImageRole.RENDERED

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ShapeMismatchError(f"Expected an H x W x 3 image, got {self.pixels.shape}")
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("Image contains non-finite values")

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def shape(self):
        return self.pixels.shape

    @classmethod
    def black(cls, camera, **kwargs):
        return cls(np.zeros(camera.shape), **kwargs)

    def check_camera(self, camera):
        if self.pixels.shape != camera.shape:
            raise ShapeMismatchError(
                f"Image shape {self.pixels.shape} does not match camera {camera.shape}"
            )

    def scaled(self, factor):
        return ImageBuffer(self.pixels * factor, self.timestamp, self.exposure, self.role)

    def with_role(self, role):
        return ImageBuffer(self.pixels, self.timestamp, self.exposure, role)


@dataclass(frozen=True)
class RenderSettings:
    z_near: float = Z_NEAR
    dilation: float = DILATION
    alpha_max: float = 0.999
    min_transmittance: float = 1e-4
    support_sigma: float | None = 3.0
    tile_size: int = 16
    threads: int = 1


@dataclass(eq=False)
class RenderGradients:
    means: np.ndarray
    quats: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    pose_twists: np.ndarray  # (n_poses, 6), (rho, omega) left perturbations

    @classmethod
    def zeros(cls, count, poses):
        return cls(
            np.zeros((count, 3)), np.zeros((count, 4)), np.zeros((count, 3)),
            np.zeros(count), np.zeros((count, 3)), np.zeros((poses, 6)),
        )

    def groups(self):
        return {
            "means": self.means,
            "quats": self.quats,
            "log_scales": self.log_scales,
            "opacity_logits": self.opacity_logits,
            "colors": self.colors,
        }

    def is_finite(self):
        arrays = list(self.groups().values()) + [self.pose_twists]
        return all(np.all(np.isfinite(a)) for a in arrays)

@dataclass(eq=False)
class _Splats:
    """Screen-space splats of a batch of views, sorted by view and then depth."""

    projected: object
    order: np.ndarray   # projection row of each splat
    view: np.ndarray
    mean2d: np.ndarray
    conic: np.ndarray   # (K, 3): a, b, c of the inverse 2D covariance
    opacity: np.ndarray
    color: np.ndarray
    radius: np.ndarray
    views: int

    def __len__(self):
        return len(self.order)


def _prepare(scene, poses, camera, settings):
    projected = project_views(scene, poses, camera, settings.z_near, settings.dilation)
    order = np.lexsort((projected.index, projected.depth, projected.view))
    cov = projected.cov2d[order]
    a, b, c = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    if settings.support_sigma is None:
        radius = np.full(len(order), np.inf)
    else:
        mid = 0.5 * (a + c)
        lam = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
        radius = settings.support_sigma * np.sqrt(lam)
    index = projected.index[order]
    return _Splats(
        projected, order, projected.view[order], projected.mean2d[order], conic,
        sigmoid(scene.opacity_logits[index]), scene.colors[index], radius, len(poses),
    )


def _tiles(camera, settings):
    size = settings.tile_size
    return [
        (y0, min(y0 + size, camera.height), x0, min(x0 + size, camera.width))
        for y0 in range(0, camera.height, size)
        for x0 in range(0, camera.width, size)
    ]


def _stable_order(keys):
    if len(keys) and keys.max() < 2**16:
        keys = keys.astype(np.uint16)
    return np.argsort(keys, kind="stable")


def _sum_by(labels, values, count):
    """Rows of ``values`` summed per label, in row order."""
    flat = values.reshape(len(values), -1)
    sums = [np.bincount(labels, weights=flat[:, i], minlength=count) for i in range(flat.shape[1])]
    return np.stack(sums, axis=1).reshape((count,) + values.shape[1:])


@dataclass(eq=False)
class _TilePairs:
    """(splat, pixel) pairs of one tile, grouped by view and pixel, front to back."""

    splat: np.ndarray
    x: np.ndarray
    y: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    sigma: np.ndarray    # half the squared Mahalanobis distance
    segment: np.ndarray  # one segment per (view, pixel)
    rank: np.ndarray     # depth position within the segment
    starts: np.ndarray
    depth: int


def _tile_pairs(splats, tile, settings):
    y0, y1, x0, x1 = tile
    m, r = splats.mean2d, splats.radius
    lo_x = np.maximum(np.ceil(m[:, 0] - r), x0)
    hi_x = np.minimum(np.floor(m[:, 0] + r), x1 - 1)
    lo_y = np.maximum(np.ceil(m[:, 1] - r), y0)
    hi_y = np.minimum(np.floor(m[:, 1] + r), y1 - 1)
    sel = np.flatnonzero((hi_x >= lo_x) & (hi_y >= lo_y))
    if len(sel) == 0:
        return None
    lo_x, lo_y = lo_x[sel].astype(np.int64), lo_y[sel].astype(np.int64)
    width = hi_x[sel].astype(np.int64) - lo_x + 1
    counts = width * (hi_y[sel].astype(np.int64) - lo_y + 1)
    splat = np.repeat(sel, counts)
    local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    row, col = np.divmod(local, np.repeat(width, counts))
    x = np.repeat(lo_x, counts) + col
    y = np.repeat(lo_y, counts) + row
    dx = x - splats.mean2d[splat, 0]
    dy = y - splats.mean2d[splat, 1]
    ca, cb, cc = splats.conic[splat].T
    sigma = 0.5 * (ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy)
    if settings.support_sigma is not None:
        # pairs outside the ellipse have zero alpha
        inside = np.flatnonzero(sigma <= 0.5 * settings.support_sigma**2)
        if len(inside) == 0:
            return None
        splat, x, y, dx, dy, sigma = (a[inside] for a in (splat, x, y, dx, dy, sigma))

    # generated view-major and front to back; a stable sort keeps that within a pixel
    key = splats.view[splat] * ((y1 - y0) * (x1 - x0)) + (y - y0) * (x1 - x0) + (x - x0)
    order = _stable_order(key)
    splat, x, y, dx, dy, sigma, key = (a[order] for a in (splat, x, y, dx, dy, sigma, key))
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    lengths = np.diff(np.r_[starts, len(key)])
    segment = np.repeat(np.arange(len(starts)), lengths)
    rank = np.arange(len(key)) - np.repeat(starts, lengths)
    return _TilePairs(splat, x, y, dx, dy, sigma, segment, rank, starts, int(lengths.max()))


def _tile_forward(splats, tile, settings):
    """Per-pair compositing terms of one tile."""
    pairs = _tile_pairs(splats, tile, settings)
    if pairs is None:
        return None, None
    dx, dy = pairs.dx, pairs.dy
    g = np.exp(-pairs.sigma)
    raw = splats.opacity[pairs.splat] * g
    free = raw < settings.alpha_max
    alpha = np.minimum(raw, settings.alpha_max)

    # exact front-to-back products along each pixel's depth list
    keep = np.ones((len(pairs.starts), pairs.depth))
    keep[pairs.segment, pairs.rank] = 1.0 - alpha
    remaining_grid = np.cumprod(keep, axis=1)
    remaining = remaining_grid[pairs.segment, pairs.rank]
    transmittance = np.where(pairs.rank > 0, remaining_grid[pairs.segment, pairs.rank - 1], 1.0)
    active = remaining >= settings.min_transmittance
    weight = alpha * transmittance * active
    return pairs, {
        "dx": dx, "dy": dy, "g": g, "raw": raw, "alpha": alpha,
        "differentiable": free & active, "active": active,
        "transmittance": transmittance, "weight": weight,
    }


def _map_tiles(fn, tiles, settings):
    if settings.threads > 1 and len(tiles) > 1:
        with ThreadPoolExecutor(max_workers=settings.threads) as pool:
            return list(pool.map(fn, tiles))
    return [fn(t) for t in tiles]


def _composite(splats, camera, settings, channels, values):
    """Per-view images of ``values(pairs, terms)``, an (N, C) array summed over each pixel's splats."""

    def shade(tile):
        pairs, terms = _tile_forward(splats, tile, settings)
        if pairs is None:
            return None
        return pairs, _sum_by(pairs.segment, values(pairs, terms), len(pairs.starts))

    results = _map_tiles(shade, _tiles(camera, settings), settings)
    out = np.zeros((splats.views, camera.height, camera.width, channels))
    for result in results:
        if result is None:
            continue
        pairs, sums = result
        first = pairs.starts
        out[splats.view[pairs.splat[first]], pairs.y[first], pairs.x[first]] = sums
    return out


def _render_views(scene, poses, camera, settings):
    """(n, H, W, 3) renders of ``scene`` from every pose."""
    out = np.zeros((len(poses),) + camera.shape)
    if len(scene) == 0 or not poses:
        return out
    splats = _prepare(scene, poses, camera, settings)
    if len(splats) == 0:
        return out
    return _composite(
        splats, camera, settings, 3, lambda pairs, t: t["weight"][:, None] * splats.color[pairs.splat]
    )


def render(scene, pose, cam, settings=None):
    """Renders ``scene`` from ``pose``; an empty scene gives a black image."""
    settings = settings or RenderSettings()
    return ImageBuffer(_render_views(scene, [pose], cam, settings)[0])


def render_blurred(scene, traj, cam, n, settings=None):
    """Mean of ``n`` renders at uniformly spaced normalised times of ``traj``.

    The virtual poses are projected and composited as one batch.
    """
    settings = settings or RenderSettings()
    poses = [traj.pose(u) for u in virtual_parameters(n)]
    images = _render_views(scene, poses, cam, settings)
    return ImageBuffer(images.sum(axis=0) / n, exposure=(0.0, traj.exposure)), poses


def render_views(scene, poses, cam, settings=None):
    settings = settings or RenderSettings()
    return [ImageBuffer(image) for image in _render_views(scene, list(poses), cam, settings)]


def accumulated_opacity(scene, pose, cam, settings=None):
    """Per-pixel ``sum_i alpha_i T_i``."""
    settings = settings or RenderSettings()
    out = np.zeros(cam.shape[:2])
    if len(scene) == 0:
        return out
    splats = _prepare(scene, [pose], cam, settings)
    if len(splats) == 0:
        return out
    return _composite(splats, cam, settings, 1, lambda pairs, t: t["weight"][:, None])[0, :, :, 0]


def _tile_backward(splats, tile, grad_pixels, settings):
    """Per-splat partial gradients of one tile: colour (3), opacity (1), 2D mean (2) and conic (3)."""
    pairs, t = _tile_forward(splats, tile, settings)
    if pairs is None:
        return None
    k = pairs.splat
    grad = grad_pixels[pairs.y, pairs.x]
    color = splats.color[k]
    dot = np.sum(color * grad, axis=1)
    wc = t["weight"] * dot
    behind_grid = np.zeros((len(pairs.starts), pairs.depth))
    behind_grid[pairs.segment, pairs.rank] = wc
    behind_grid = np.cumsum(behind_grid[:, ::-1], axis=1)[:, ::-1]
    behind = behind_grid[pairs.segment, pairs.rank] - wc
    d_alpha = t["active"] * (t["transmittance"] * dot - behind / (1.0 - t["alpha"]))
    d_raw = np.where(t["differentiable"], d_alpha, 0.0)
    d_sigma = -d_raw * t["raw"]
    ca, cb, cc = splats.conic[k].T
    dx, dy = t["dx"], t["dy"]
    per_pair = np.column_stack([
        t["weight"][:, None] * grad,
        d_raw * t["g"],
        -d_sigma * (ca * dx + cb * dy),
        -d_sigma * (cb * dx + cc * dy),
        0.5 * d_sigma * dx * dx,
        0.5 * d_sigma * dx * dy,
        0.5 * d_sigma * dy * dy,
    ])
    return _sum_by(k, per_pair, len(splats))


def _chain_to_scene(scene, poses, camera, splats, partials, out):
    """Screen-space splat gradients through projection to the Gaussians and every pose."""
    unsort = np.empty(len(splats), dtype=np.intp)
    unsort[splats.order] = np.arange(len(splats))
    partials = partials[unsort]
    d_color, d_opacity = partials[:, 0:3], partials[:, 3]
    d_mean2d, d_conic = partials[:, 4:6], partials[:, 6:9]
    conic = splats.conic[unsort]
    proj = splats.projected
    index, view = proj.index, proj.view
    k = len(index)

    q_inv = np.empty((k, 2, 2))
    q_inv[:, 0, 0], q_inv[:, 0, 1], q_inv[:, 1, 1] = conic[:, 0], conic[:, 1], conic[:, 2]
    q_inv[:, 1, 0] = conic[:, 1]
    g_conic = np.empty((k, 2, 2))
    g_conic[:, 0, 0], g_conic[:, 1, 1] = d_conic[:, 0], d_conic[:, 2]
    g_conic[:, 0, 1] = g_conic[:, 1, 0] = d_conic[:, 1]
    g_cov2d = -q_inv @ g_conic @ q_inv

    jac = proj.jacobian
    jac_t = np.transpose(jac, (0, 2, 1))
    g_cov_cam = jac_t @ g_cov2d @ jac
    g_jac = 2.0 * g_cov2d @ jac @ proj.cov_cam

    x, y, z = proj.p_cam.T
    fx, fy = camera.fx, camera.fy
    g_p = np.einsum("kij,ki->kj", jac, d_mean2d)
    g_p[:, 0] += g_jac[:, 0, 2] * (-fx / (z * z))
    g_p[:, 1] += g_jac[:, 1, 2] * (-fy / (z * z))
    g_p[:, 2] += (
        g_jac[:, 0, 0] * (-fx / (z * z))
        + g_jac[:, 0, 2] * (2.0 * fx * x / z**3)
        + g_jac[:, 1, 1] * (-fy / (z * z))
        + g_jac[:, 1, 2] * (2.0 * fy * y / z**3)
    )

    rotation = np.stack([p.rotation for p in poses])
    translation = np.stack([p.translation for p in poses])
    r_c = rotation[view]
    g_cov3d = np.transpose(r_c, (0, 2, 1)) @ g_cov_cam @ r_c
    means = scene.means[index]
    g_rc = _sum_by(view, np.einsum("ki,kj->kij", g_p, means) + 2.0 * g_cov_cam @ r_c @ proj.cov3d, len(poses))
    g_tc = _sum_by(view, g_p, len(poses))

    # covariance chain once per Gaussian, after summing over views
    count = len(scene)
    g_cov3d = _sum_by(index, g_cov3d, count)
    rotations, scales, _ = world_covariances(scene)
    m = rotations * scales[:, None, :]
    g_m = 2.0 * g_cov3d @ m
    g_rot = g_m * scales[:, None, :]
    d_log_scales = scales * np.sum(g_m * rotations, axis=1)
    q = scene.quats
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    q_unit = q / norm
    g_qunit = np.einsum("nkij,nij->nk", rotation_quaternion_jacobian(q_unit), g_rot)
    d_quats = (g_qunit - q_unit * np.sum(q_unit * g_qunit, axis=1, keepdims=True)) / norm

    opacity = sigmoid(scene.opacity_logits)
    out.means += _sum_by(index, np.einsum("ki,kij->kj", g_p, r_c), count)
    out.quats += d_quats
    out.log_scales += d_log_scales
    out.opacity_logits += _sum_by(index, d_opacity, count) * opacity * (1.0 - opacity)
    out.colors += _sum_by(index, d_color, count)

    a = g_rc @ np.transpose(rotation, (0, 2, 1)) + np.einsum("vi,vj->vij", g_tc, translation)
    out.pose_twists[:] = np.column_stack([
        g_tc,
        a[:, 2, 1] - a[:, 1, 2],
        a[:, 0, 2] - a[:, 2, 0],
        a[:, 1, 0] - a[:, 0, 1],
    ])


def render_backward(scene, virtual_poses, cam, grad_blur, settings=None):
    """Gradients of a loss on ``render_blurred`` output with respect to the scene and every virtual pose.

    Args:
        grad_blur: ``dL/dB``, an (H, W, 3) array or :class:`ImageBuffer`.

    Raises:
        ShapeMismatchError: if ``grad_blur`` does not match the camera.
    """
    settings = settings or RenderSettings()
    grad = grad_blur.pixels if isinstance(grad_blur, ImageBuffer) else np.asarray(grad_blur, dtype=np.float64)
    if grad.shape != cam.shape:
        raise ShapeMismatchError(f"Gradient shape {grad.shape} does not match camera {cam.shape}")
    if not np.all(np.isfinite(grad)):
        raise ValueError("Image gradient contains non-finite values")
    poses = list(virtual_poses)
    out = RenderGradients.zeros(len(scene), len(poses))
    if len(scene) == 0 or not poses:
        return out
    splats = _prepare(scene, poses, cam, settings)
    if len(splats) == 0:
        return out
    grad = grad / len(poses)
    partials = np.zeros((len(splats), 9))
    tiles = _tiles(cam, settings)
    for tile_partials in _map_tiles(lambda tile: _tile_backward(splats, tile, grad, settings), tiles, settings):
        if tile_partials is not None:
            partials += tile_partials
    _chain_to_scene(scene, poses, cam, splats, partials, out)
    return out
