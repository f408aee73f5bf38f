"""
SE(3) / so(3) machinery.

Twists are ordered ``(rho, omega)``: ``rho`` is the translational part and
``omega`` the axis-angle rotation. ``exp`` maps a twist to
``[[R, V rho], [0, 1]]``. Poses map world points into the camera frame,
``x_cam = R x_world + t``.

Jacobians are expressed for left perturbations, ``T <- exp(delta) T``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import comb

SMALL_ANGLE = 1e-8
# below this angle the third-order coefficients lose too many digits
SERIES_ANGLE = 1e-2
NEAR_PI_MARGIN = 1e-6


class RotationNearPiError(Exception):
    """Raised when a rotation angle is too close to pi for a unique logarithm."""
    pass


RotationNearPi = RotationNearPiError


def skew(v):
    """3x3 cross-product matrix of ``v``."""
    x, y, z = v
    return np.array([
        [0.0, -z, y],
        [z, 0.0, -x],
        [-y, x, 0.0],
    ])


def vee(m):
    """Inverse of :func:`skew` on the antisymmetric part of ``m``."""
    return 0.5 * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])


@dataclass(frozen=True, eq=False)
class Twist:
    rho: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=np.float64).reshape(3)
        omega = np.asarray(self.omega, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(omega))):
            raise ValueError("Twist components must be finite")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "omega", omega)

    @classmethod
    def from_vector(cls, xi):
        xi = np.asarray(xi, dtype=np.float64).reshape(6)
        return cls(xi[:3], xi[3:])

    @classmethod
    def zero(cls):
        return cls(np.zeros(3), np.zeros(3))

    def as_vector(self):
        return np.concatenate([self.rho, self.omega])

    def scaled(self, s):
        return Twist(self.rho * s, self.omega * s)

    @property
    def angle(self):
        return float(np.linalg.norm(self.omega))


@dataclass(frozen=True, eq=False)
class SE3Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_translation(cls, t):
        return cls(np.eye(3), t)

    @classmethod
    def look_at(cls, eye, target, up=(0.0, -1.0, 0.0)):
        """World-to-camera pose of a camera at ``eye`` looking at ``target``.

        Camera axes follow the pinhole convention: x right, y down, z forward.
        """
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, up)
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rotation = np.vstack([right, down, forward])
        return cls(rotation, -rotation @ eye)

    def as_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self):
        rt = self.rotation.T
        return SE3Pose(rt, -rt @ self.translation)

    def compose(self, other):
        """``self * other``."""
        return SE3Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    __matmul__ = compose

    def transform(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    @property
    def center(self):
        """Camera centre in world coordinates."""
        return -self.rotation.T @ self.translation

    def adjoint(self):
        """6x6 adjoint so that ``T exp(xi) T^-1 = exp(Ad(T) xi)``."""
        ad = np.zeros((6, 6))
        ad[:3, :3] = self.rotation
        ad[:3, 3:] = skew(self.translation) @ self.rotation
        ad[3:, 3:] = self.rotation
        return ad

    def orthonormality_error(self):
        r = self.rotation
        return max(
            float(np.abs(r.T @ r - np.eye(3)).max()),
            abs(float(np.linalg.det(r)) - 1.0),
        )

    def distance(self, other):
        return float(np.linalg.norm(self.as_matrix() - other.as_matrix()))


def _rotation_coefficients(theta):
    """Returns ``sin(t)/t``, ``(1 - cos t)/t^2`` and ``(t - sin t)/t^3``."""
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    half = 0.5 * theta
    a = np.sin(theta) / theta
    b = 0.5 * (np.sin(half) / half) ** 2
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2 * t2 * t2 / 362880.0
    else:
        c = (theta - np.sin(theta)) / theta**3
    return a, b, c


def so3_exp(omega):
    omega = np.asarray(omega, dtype=np.float64)
    theta = float(np.linalg.norm(omega))
    a, b, _ = _rotation_coefficients(theta)
    w = skew(omega)
    return np.eye(3) + a * w + b * (w @ w)


def so3_left_jacobian(omega):
    """Left Jacobian of SO(3); also the ``V`` matrix of the SE(3) exponential."""
    omega = np.asarray(omega, dtype=np.float64)
    theta = float(np.linalg.norm(omega))
    _, b, c = _rotation_coefficients(theta)
    w = skew(omega)
    return np.eye(3) + b * w + c * (w @ w)


def _so3_log(rotation):
    cos_theta = 0.5 * (np.trace(rotation) - 1.0)
    axis_sin = vee(rotation)
    sin_theta = float(np.linalg.norm(axis_sin))
    theta = float(np.arctan2(sin_theta, cos_theta))
    if theta >= np.pi - NEAR_PI_MARGIN:
        raise RotationNearPiError(f"Rotation angle {theta:.9f} is too close to pi")
    if theta < SMALL_ANGLE:
        return (1.0 + theta * theta / 6.0) * axis_sin, theta
    return (theta / sin_theta) * axis_sin, theta


def so3_left_jacobian_inverse(omega):
    omega = np.asarray(omega, dtype=np.float64)
    theta = float(np.linalg.norm(omega))
    w = skew(omega)
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        half = 0.5 * theta
        d = (1.0 - half * np.cos(half) / np.sin(half)) / (theta * theta)
    return np.eye(3) - 0.5 * w + d * (w @ w)


def se3_exp(xi):
    """Closed-form SE(3) exponential of a :class:`Twist` (or 6-vector)."""
    if not isinstance(xi, Twist):
        xi = Twist.from_vector(xi)
    rotation = so3_exp(xi.omega)
    v = so3_left_jacobian(xi.omega)
    return SE3Pose(rotation, v @ xi.rho)


def se3_log(pose):
    """SE(3) logarithm; rejects rotations within 1e-6 of pi."""
    omega, _ = _so3_log(pose.rotation)
    rho = so3_left_jacobian_inverse(omega) @ pose.translation
    return Twist(rho, omega)


def _q_matrix(rho, omega):
    """Upper-right block of the SE(3) left Jacobian."""
    theta = float(np.linalg.norm(omega))
    p = skew(rho)
    w = skew(omega)
    wp = w @ p
    pw = p @ w
    wpw = wp @ w
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        c1 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        c2 = 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0
        c3 = 1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0
    else:
        s, c = np.sin(theta), np.cos(theta)
        c1 = (theta - s) / theta**3
        c2 = (theta * theta + 2.0 * c - 2.0) / (2.0 * theta**4)
        c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * theta**5)
    return (
        0.5 * p
        + c1 * (wp + pw + wpw)
        + c2 * (w @ wp + pw @ w - 3.0 * wpw)
        + c3 * (wpw @ w + w @ wpw)
    )


def se3_left_jacobian(xi):
    """6x6 left Jacobian: ``exp(xi + d) ~= exp(J d) exp(xi)``."""
    if not isinstance(xi, Twist):
        xi = Twist.from_vector(xi)
    j = so3_left_jacobian(xi.omega)
    out = np.zeros((6, 6))
    out[:3, :3] = j
    out[3:, 3:] = j
    out[:3, 3:] = _q_matrix(xi.rho, xi.omega)
    return out


def se3_left_jacobian_inverse(xi):
    return np.linalg.inv(se3_left_jacobian(xi))


def left_twist_difference(pose, reference):
    """Twist ``delta`` with ``pose = exp(delta) reference``."""
    return se3_log(pose.compose(reference.inverse()))


def bernstein(m, j, u):
    """Bernstein basis polynomial ``C(m, j) (1 - u)^(m - j) u^j``."""
    if m < 0 or not 0 <= j <= m:
        raise ValueError(f"Bernstein index {j} out of range for degree {m}")
    return float(comb(m, j, exact=True)) * (1.0 - u) ** (m - j) * u**j


def bernstein_weights(m, u):
    return np.array([bernstein(m, j, u) for j in range(m + 1)])


def random_rotation(rng, max_angle=np.pi):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0.0, max_angle))
