"""
Gaussian scene representation and its pinhole projection.

A scene is stored as parallel arrays (``means``, ``quats`` in ``w, x, y, z``
order, ``log_scales``, ``opacity_logits``, ``colors``) so the renderer and the
optimiser can work on whole parameter groups; :class:`Gaussian3D` is the
per-splat record view of one row.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

Z_NEAR = 0.01
DILATION = 0.3
PARAMETER_GROUPS = ("means", "quats", "log_scales", "opacity_logits", "colors")


class BehindCameraError(Exception):
    """Raised when a Gaussian's camera-space depth is at or below the near plane."""
    pass


class SceneCapacityError(Exception):
    """Raised when a scene would exceed its Gaussian capacity."""
    pass


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def quaternion_to_rotation(q):
    """Rotation matrices for (N, 4) or (4,) quaternions ``w, x, y, z``; normalises first."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    r = np.empty((len(q), 3, 3))
    r[:, 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    r[:, 0, 1] = 2.0 * (x * y - w * z)
    r[:, 0, 2] = 2.0 * (x * z + w * y)
    r[:, 1, 0] = 2.0 * (x * y + w * z)
    r[:, 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    r[:, 1, 2] = 2.0 * (y * z - w * x)
    r[:, 2, 0] = 2.0 * (x * z - w * y)
    r[:, 2, 1] = 2.0 * (y * z + w * x)
    r[:, 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return r[0] if single else r


def rotation_quaternion_jacobian(q_unit):
    """``dR / dq`` for unit quaternions, shape (N, 4, 3, 3)."""
    w, x, y, z = np.asarray(q_unit, dtype=np.float64).T
    zero = np.zeros_like(w)
    dw = np.stack([
        np.stack([zero, -z, y], -1),
        np.stack([z, zero, -x], -1),
        np.stack([-y, x, zero], -1),
    ], 1)
    dx = np.stack([
        np.stack([zero, y, z], -1),
        np.stack([y, -2.0 * x, -w], -1),
        np.stack([z, w, -2.0 * x], -1),
    ], 1)
    dy = np.stack([
        np.stack([-2.0 * y, x, w], -1),
        np.stack([x, zero, z], -1),
        np.stack([-w, z, -2.0 * y], -1),
    ], 1)
    dz = np.stack([
        np.stack([-2.0 * z, -w, x], -1),
        np.stack([w, -2.0 * z, y], -1),
        np.stack([x, y, zero], -1),
    ], 1)
    return 2.0 * np.stack([dw, dx, dy, dz], 1)


def rotation_to_quaternion(r):
    xyzw = Rotation.from_matrix(r).as_quat()
    return np.concatenate([xyzw[..., 3:], xyzw[..., :3]], axis=-1)


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("Focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("Camera resolution must be at least 1x1")

    @property
    def shape(self):
        return (self.height, self.width, 3)

    def to_dict(self):
        return {
            "fx": float(self.fx), "fy": float(self.fy),
            "cx": float(self.cx), "cy": float(self.cy),
            "width": int(self.width), "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
            int(d["width"]), int(d["height"]),
        )


@dataclass(frozen=True, eq=False)
class Gaussian3D:
    mu: np.ndarray
    q: np.ndarray
    log_scale: np.ndarray
    opacity_logit: float
    color: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64).reshape(4)
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=np.float64).reshape(3))
        object.__setattr__(self, "q", q / np.linalg.norm(q))
        object.__setattr__(self, "log_scale", np.asarray(self.log_scale, dtype=np.float64).reshape(3))
        object.__setattr__(self, "opacity_logit", float(self.opacity_logit))
        object.__setattr__(self, "color", np.asarray(self.color, dtype=np.float64).reshape(3))

    @property
    def opacity(self):
        return float(sigmoid(self.opacity_logit))

    @property
    def rotation(self):
        return quaternion_to_rotation(self.q)


def covariance3d(g):
    """``R S S^T R^T`` with ``S = diag(exp(log_scale))``."""
    m = g.rotation * np.exp(g.log_scale)[None, :]
    return m @ m.T


def evaluate_density(g, x):
    d = np.asarray(x, dtype=np.float64) - g.mu
    return float(np.exp(-0.5 * d @ np.linalg.solve(covariance3d(g), d)))


class SceneModel:
    """Gaussians as parallel parameter arrays with a fixed capacity ``n_max``."""

    def __init__(self, means=None, quats=None, log_scales=None, opacity_logits=None,
                 colors=None, capacity=None):
        n = 0 if means is None else len(means)
        self.means = np.zeros((0, 3)) if means is None else np.array(means, dtype=np.float64).reshape(n, 3)
        self.quats = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)) if quats is None else np.array(quats, dtype=np.float64).reshape(n, 4)
        self.log_scales = np.zeros((n, 3)) if log_scales is None else np.array(log_scales, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.zeros(n) if opacity_logits is None else np.array(opacity_logits, dtype=np.float64).reshape(n)
        self.colors = np.full((n, 3), 0.5) if colors is None else np.array(colors, dtype=np.float64).reshape(n, 3)
        self.capacity = int(capacity) if capacity is not None else max(n, 1)
        if n > self.capacity:
            raise SceneCapacityError(f"{n} Gaussians exceed capacity {self.capacity}")

    @classmethod
    def from_gaussians(cls, gaussians, capacity=None):
        gaussians = list(gaussians)
        if not gaussians:
            return cls(capacity=capacity)
        return cls(
            np.stack([g.mu for g in gaussians]),
            np.stack([g.q for g in gaussians]),
            np.stack([g.log_scale for g in gaussians]),
            np.array([g.opacity_logit for g in gaussians]),
            np.stack([g.color for g in gaussians]),
            capacity=capacity,
        )

    def __len__(self):
        return len(self.means)

    def __getitem__(self, i):
        return Gaussian3D(self.means[i], self.quats[i], self.log_scales[i],
                          self.opacity_logits[i], self.colors[i])

    @property
    def gaussians(self):
        return [self[i] for i in range(len(self))]

    @property
    def opacities(self):
        return sigmoid(self.opacity_logits)

    @property
    def scales(self):
        return np.exp(self.log_scales)

    def parameters(self):
        return {name: getattr(self, name) for name in PARAMETER_GROUPS}

    def set_parameters(self, params):
        for name in PARAMETER_GROUPS:
            setattr(self, name, np.array(params[name], dtype=np.float64))

    def copy(self):
        return SceneModel(self.means, self.quats, self.log_scales,
                          self.opacity_logits, self.colors, self.capacity)

    def with_capacity(self, capacity):
        out = self.copy()
        if capacity < len(out):
            raise SceneCapacityError(f"{len(out)} Gaussians exceed capacity {capacity}")
        out.capacity = int(capacity)
        return out

    def append(self, params):
        added = len(params["means"])
        if len(self) + added > self.capacity:
            raise SceneCapacityError(
                f"Adding {added} Gaussians to {len(self)} exceeds capacity {self.capacity}"
            )
        for name in PARAMETER_GROUPS:
            setattr(self, name, np.concatenate([getattr(self, name), params[name]]))

    def normalize_quaternions(self):
        self.quats /= np.linalg.norm(self.quats, axis=1, keepdims=True)

    def covariances(self):
        return world_covariances(self)[2]

    def is_finite(self):
        return all(np.all(np.isfinite(v)) for v in self.parameters().values())

    def extent(self):
        """Radius of the bounding sphere around the mean of all Gaussian centres."""
        if len(self) == 0:
            return 1.0
        return float(np.linalg.norm(self.means - self.means.mean(0), axis=1).max()) or 1.0

    def __repr__(self):
        return f"SceneModel(count={len(self)}, capacity={self.capacity})"


@dataclass(eq=False)
class ProjectedGaussians:
    """Screen-space quantities of the Gaussians in front of the camera(s)."""

    index: np.ndarray     # rows of the scene that survived culling
    p_cam: np.ndarray     # (K, 3) camera-space means
    rotations: np.ndarray  # (K, 3, 3) Gaussian orientations
    scales: np.ndarray    # (K, 3)
    cov3d: np.ndarray     # (K, 3, 3) world-space covariance
    cov_cam: np.ndarray   # (K, 3, 3) camera-space covariance
    jacobian: np.ndarray  # (K, 2, 3) pinhole Jacobian at p_cam
    mean2d: np.ndarray    # (K, 2)
    cov2d: np.ndarray     # (K, 2, 2), dilated
    view: np.ndarray      # (K,) pose each row was projected with

    @property
    def depth(self):
        return self.p_cam[:, 2]

    def __len__(self):
        return len(self.index)


def pinhole_jacobian(p_cam, camera):
    x, y, z = p_cam.T
    j = np.zeros((len(p_cam), 2, 3))
    j[:, 0, 0] = camera.fx / z
    j[:, 0, 2] = -camera.fx * x / (z * z)
    j[:, 1, 1] = camera.fy / z
    j[:, 1, 2] = -camera.fy * y / (z * z)
    return j


def world_covariances(scene):
    """Rotations, scales and ``R S S^T R^T`` of every Gaussian."""
    rotations = quaternion_to_rotation(scene.quats).reshape(-1, 3, 3)
    scales = np.exp(scene.log_scales)
    m = rotations * scales[:, None, :]
    return rotations, scales, m @ np.transpose(m, (0, 2, 1))


def project_views(scene, poses, camera, z_near=Z_NEAR, dilation=DILATION):
    """Projects every Gaussian into each of ``poses``, culling those in front of ``z_near``.

    Rows are grouped by pose, in pose order, and by scene row within a pose.
    """
    rotation = np.stack([p.rotation for p in poses])
    translation = np.stack([p.translation for p in poses])
    p_all = np.einsum("vij,kj->vki", rotation, scene.means) + translation[:, None, :]
    view, index = np.nonzero(p_all[..., 2] > z_near)
    p_cam = p_all[view, index]
    rotations, scales, cov3d = world_covariances(scene)
    r = rotation[view]
    cov3d = cov3d[index]
    cov_cam = r @ cov3d @ np.transpose(r, (0, 2, 1))
    jac = pinhole_jacobian(p_cam, camera)
    cov2d = jac @ cov_cam @ np.transpose(jac, (0, 2, 1)) + dilation * np.eye(2)[None]
    mean2d = np.stack([
        camera.fx * p_cam[:, 0] / p_cam[:, 2] + camera.cx,
        camera.fy * p_cam[:, 1] / p_cam[:, 2] + camera.cy,
    ], axis=1)
    return ProjectedGaussians(
        index, p_cam, rotations[index], scales[index], cov3d, cov_cam, jac, mean2d, cov2d, view
    )


def project_gaussians(scene, pose, camera, z_near=Z_NEAR, dilation=DILATION):
    """Projects every Gaussian in front of ``z_near``; the rest are culled."""
    return project_views(scene, [pose], camera, z_near, dilation)


def project(g, pose, cam, z_near=Z_NEAR, dilation=DILATION):
    """Returns ``(mean2d, cov2d, depth)`` of one Gaussian.

    Raises:
        BehindCameraError: if the camera-space depth is at or below ``z_near``.
    """
    scene = SceneModel.from_gaussians([g])
    projected = project_gaussians(scene, pose, cam, z_near=z_near, dilation=dilation)
    if len(projected) == 0:
        depth = float(pose.transform(g.mu)[2])
        raise BehindCameraError(f"Gaussian at depth {depth:.4f} is behind the near plane {z_near}")
    return projected.mean2d[0], projected.cov2d[0], float(projected.depth[0])


def scene_from_pointcloud(points, colors=None, capacity=None, opacity=0.5, neighbours=3):
    """Isotropic Gaussians at ``points`` sized by the mean distance to their nearest neighbours."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    if n == 0:
        return SceneModel(capacity=capacity)
    k = min(neighbours + 1, n)
    if k > 1:
        dist, _ = cKDTree(points).query(points, k=k)
        spacing = np.maximum(dist[:, 1:].mean(axis=1), 1e-4)
    else:
        spacing = np.full(n, 0.1)
    log_scales = np.repeat(np.log(spacing)[:, None], 3, axis=1)
    if colors is None:
        colors = np.full((n, 3), 0.5)
    return SceneModel(
        points,
        np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        log_scales,
        np.full(n, float(logit(opacity))),
        np.clip(colors, 0.0, 1.0),
        capacity=capacity if capacity is not None else n,
    )
