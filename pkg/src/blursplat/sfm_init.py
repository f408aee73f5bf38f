"""
Calibrated stand-in for a learned structure-from-motion front end.

No features are matched. Ground-truth poses are perturbed with noise whose
translation statistics follow measured per-blur-level pose errors, and the
point cloud is sampled from the ground-truth Gaussians. Everything downstream
(trajectory optimisation, densification) sees only the degraded estimates.
"""

from dataclasses import dataclass, fields

import numpy as np

from .liegroup import SE3Pose, so3_exp
from .scene import scene_from_pointcloud
from .trajectory import make_trajectory

BASE_ROTATION_SIGMA = np.deg2rad(0.5)
BASE_JITTER = 0.01


class UnknownBlurLevelError(Exception):
    """Raised when no noise profile is tabulated for a blur level."""
    pass


@dataclass(frozen=True)
class NoiseProfile:
    blur_level: int | str
    rmse: float
    mean: float
    median: float
    std: float
    minimum: float
    maximum: float
    rotation_sigma: float

    def __post_init__(self):
        stats = (self.rmse, self.mean, self.median, self.std, self.minimum, self.maximum, self.rotation_sigma)
        if any(s < 0.0 for s in stats):
            raise ValueError("Noise statistics must be nonnegative")

    @property
    def is_zero(self):
        return self.rmse == 0.0 and self.rotation_sigma == 0.0


def _profile(level, rmse, mean, median, std, minimum, maximum):
    sigma = BASE_ROTATION_SIGMA * level / 3.0
    return NoiseProfile(level, rmse, mean, median, std, minimum, maximum, sigma)


# translation error statistics (meters) of poses recovered from blurred images
NOISE_PROFILES = {
    3: _profile(3, 0.1815, 0.1564, 0.1253, 0.0919, 0.0414, 0.3537),
    5: _profile(5, 0.3181, 0.2654, 0.1950, 0.1755, 0.0846, 0.6524),
    7: _profile(7, 0.3975, 0.3573, 0.2885, 0.1741, 0.1787, 0.7488),
    9: _profile(9, 0.6062, 0.4861, 0.3583, 0.3621, 0.1058, 1.4308),
    11: _profile(11, 0.7212, 0.5231, 0.3518, 0.4966, 0.0915, 2.2408),
}

# poses recovered from event-deblurred images
EVENT_PROFILE = NoiseProfile("edi", 0.0990, 0.0862, 0.0750, 0.0490, 0.0100, 0.2500, BASE_ROTATION_SIGMA)

ZERO_PROFILE = NoiseProfile(1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

# mean PSNR gain (dB) of EDI over the blurred inputs at which poses reach EVENT_PROFILE
FULL_EDI_GAIN = 5.0


def noise_profile(level):
    """Profile for a blur level; level 1 (sharp input) maps to the zero profile."""
    if level == "edi":
        return EVENT_PROFILE
    if level == 1:
        return ZERO_PROFILE
    if level not in NOISE_PROFILES:
        raise UnknownBlurLevelError(
            f"No noise profile for blur level {level}; known levels: {sorted(NOISE_PROFILES)}"
        )
    return NOISE_PROFILES[level]


def blend_profiles(a, b, weight, label):
    """Statistics interpolated linearly from ``a`` (weight 0) to ``b`` (weight 1)."""
    stats = [
        (1.0 - weight) * getattr(a, f.name) + weight * getattr(b, f.name)
        for f in fields(NoiseProfile)
        if f.name != "blur_level"
    ]
    return NoiseProfile(label, *stats)


def event_profile(level, gain):
    """Profile for poses recovered from EDI outputs that beat the blurred inputs by ``gain`` dB.

    No gain keeps the blur level's profile; ``FULL_EDI_GAIN`` or more reaches
    ``EVENT_PROFILE``; gains in between blend the two.
    """
    base = noise_profile(level)
    weight = float(np.clip(gain / FULL_EDI_GAIN, 0.0, 1.0)) if np.isfinite(gain) else 0.0
    if base.is_zero or weight == 0.0:
        return base
    if weight == 1.0:
        return EVENT_PROFILE
    return blend_profiles(base, EVENT_PROFILE, weight, f"edi:{weight:.2f}")


def perturb_poses(gt, profile, seed=0):
    """Noisy copies of ``gt`` whose camera-centre RMSE equals ``profile.rmse``.

    Rotation noise ``exp(phi) R`` with ``phi ~ N(0, rotation_sigma^2)`` per
    axis keeps each camera centre where the translation noise put it.
    """
    gt = list(gt)
    if not gt:
        raise ValueError("Cannot perturb an empty pose list")
    if isinstance(profile, (int, str)):
        profile = noise_profile(profile)
    if profile.is_zero:
        return list(gt)
    rng = np.random.default_rng(seed)
    offsets = rng.normal(size=(len(gt), 3))
    realised = np.sqrt(np.mean(np.sum(offsets**2, axis=1)))
    offsets *= profile.rmse / realised if realised > 0.0 else 0.0
    phis = rng.normal(scale=profile.rotation_sigma, size=(len(gt), 3))
    out = []
    for pose, offset, phi in zip(gt, offsets, phis):
        rotation = so3_exp(phi) @ pose.rotation
        center = pose.center + offset
        out.append(SE3Pose(rotation, -rotation @ center))
    return out


def sample_pointcloud(scene, count, jitter_sigma, seed=0):
    """Samples ``count`` Gaussian means with probability proportional to opacity.

    Draws without replacement while ``count`` does not exceed the scene size.
    """
    if len(scene) == 0:
        raise ValueError("Cannot sample a point cloud from an empty scene")
    if count < 1:
        raise ValueError("Point count must be at least 1")
    rng = np.random.default_rng(seed)
    weights = scene.opacities / scene.opacities.sum()
    index = rng.choice(len(scene), size=count, replace=count > len(scene), p=weights)
    points = scene.means[index]
    if jitter_sigma > 0.0:
        points = points + rng.normal(scale=jitter_sigma, size=points.shape)
    return points


def jitter_for_profile(profile):
    return BASE_JITTER + 0.1 * profile.mean


def project_colors(points, images, poses, camera):
    """Mean colour of each point over the images it projects into; grey where it is never seen."""
    points = np.asarray(points, dtype=np.float64)
    total = np.zeros((len(points), 3))
    hits = np.zeros(len(points))
    for image, pose in zip(images, poses):
        p = pose.transform(points)
        z = p[:, 2]
        front = z > 1e-6
        u = np.full(len(points), -1)
        v = np.full(len(points), -1)
        u[front] = np.rint(camera.fx * p[front, 0] / z[front] + camera.cx).astype(int)
        v[front] = np.rint(camera.fy * p[front, 1] / z[front] + camera.cy).astype(int)
        seen = front & (u >= 0) & (u < camera.width) & (v >= 0) & (v < camera.height)
        total[seen] += image.pixels[v[seen], u[seen]]
        hits[seen] += 1.0
    colors = np.full((len(points), 3), 0.5)
    seen = hits > 0
    colors[seen] = total[seen] / hits[seen, None]
    return colors


def initial_scene(points, images, poses, camera, capacity=None):
    """Isotropic Gaussians on ``points`` coloured from the initialisation images."""
    colors = project_colors(points, images, poses, camera)
    return scene_from_pointcloud(points, colors, capacity=capacity)


def initial_trajectories(poses, kind="bezier", control_points=9, exposure=1.0):
    """Zero-motion trajectories with every control point at the view's estimated pose."""
    return [make_trajectory(kind, pose, control_points, exposure) for pose in poses]
