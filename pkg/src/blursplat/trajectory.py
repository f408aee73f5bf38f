"""
Camera motion during exposure.

Three representations share one interface: a tuple of SE(3) control points,
an exposure duration and ``pose(u)`` for the normalised time ``u = t / tau``.
``pose_and_jacobians(u)`` additionally returns, for every control point, the
6x6 Jacobian of the interpolated pose with respect to a left perturbation of
that control point (``T_j <- exp(delta_j) T_j``).
"""

from dataclasses import dataclass, field

import numpy as np

from .liegroup import (
    SE3Pose,
    bernstein_weights,
    se3_exp,
    se3_left_jacobian,
    se3_left_jacobian_inverse,
    se3_log,
)


class TrajectoryError(Exception):
    """Raised for invalid trajectories or evaluation times outside the exposure."""
    pass


def virtual_parameters(n):
    """Uniform normalised sample times for ``n`` virtual cameras."""
    if n < 1:
        raise ValueError("At least one virtual camera is required")
    if n == 1:
        return np.zeros(1)
    return np.arange(n) / (n - 1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    control_points: tuple
    exposure: float = 1.0

    kind = "base"
    min_control_points = 1

    def __post_init__(self):
        points = tuple(self.control_points)
        object.__setattr__(self, "control_points", points)
        if len(points) < self.min_control_points:
            raise TrajectoryError(
                f"{self.kind} trajectory needs at least {self.min_control_points} "
                f"control points, got {len(points)}"
            )
        if not self.exposure > 0.0:
            raise TrajectoryError("Exposure duration must be positive")

    def pose(self, u):
        raise NotImplementedError

    def pose_and_jacobians(self, u):
        raise NotImplementedError

    def pose_at(self, t):
        if not 0.0 <= t <= self.exposure:
            raise TrajectoryError(f"Time {t} outside exposure window [0, {self.exposure}]")
        return self.pose(t / self.exposure)

    def sample(self, n):
        return [self.pose(u) for u in virtual_parameters(n)]

    def with_control_points(self, points):
        return type(self)(tuple(points), self.exposure)

    def retract(self, deltas):
        """Left-multiplicative update of every control point."""
        deltas = np.asarray(deltas, dtype=np.float64).reshape(len(self.control_points), 6)
        return self.with_control_points(
            se3_exp(d).compose(p) for d, p in zip(deltas, self.control_points)
        )

    @property
    def mid_pose(self):
        return self.pose(0.5)

    @classmethod
    def constant(cls, pose, count, exposure=1.0):
        return cls(tuple([pose] * count), exposure)


@dataclass(frozen=True, eq=False)
class BezierTrajectory(Trajectory):
    """``T(u) = prod_j exp(B_j^M(u) log T_j)``, evaluated left to right in ``j``."""

    kind = "bezier"
    min_control_points = 2
    _twists: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "_twists", tuple(se3_log(p) for p in self.control_points))

    @property
    def degree(self):
        return len(self.control_points) - 1

    def _factors(self, u):
        weights = bernstein_weights(self.degree, u)
        return weights, [se3_exp(xi.scaled(w)) for xi, w in zip(self._twists, weights)]

    def pose(self, u):
        _, factors = self._factors(u)
        out = factors[0]
        for f in factors[1:]:
            out = out.compose(f)
        return out

    def twist_jacobians(self, u):
        """Pose and Jacobians with respect to each control point's log coordinates."""
        weights, factors = self._factors(u)
        prefix = SE3Pose.identity()
        jacobians = []
        for xi, w, f in zip(self._twists, weights, factors):
            scaled = xi.scaled(w)
            jacobians.append(prefix.adjoint() @ (w * se3_left_jacobian(scaled)))
            prefix = prefix.compose(f)
        return prefix, np.stack(jacobians)

    def pose_and_jacobians(self, u):
        pose, jacobians = self.twist_jacobians(u)
        out = np.empty_like(jacobians)
        for j, xi in enumerate(self._twists):
            out[j] = jacobians[j] @ se3_left_jacobian_inverse(xi)
        return pose, out


def _cumulative_pose(points, weights):
    """``P_0 prod_k exp(w_k log(P_{k-1}^-1 P_k))`` and its control-point Jacobians."""
    deltas = [se3_log(a.inverse().compose(b)) for a, b in zip(points[:-1], points[1:])]
    jacobians = np.zeros((len(points), 6, 6))
    jacobians[0] = np.eye(6)
    prefix = points[0]
    for k, (d, w) in enumerate(zip(deltas, weights), start=1):
        scaled = d.scaled(w)
        m = (
            prefix.adjoint()
            @ (w * se3_left_jacobian(scaled))
            @ se3_left_jacobian_inverse(d)
            @ points[k - 1].inverse().adjoint()
        )
        jacobians[k] += m
        jacobians[k - 1] -= m
        prefix = prefix.compose(se3_exp(scaled))
    return prefix, jacobians


@dataclass(frozen=True, eq=False)
class LinearTrajectory(Trajectory):
    """Geodesic between two poses: ``T_start exp(u log(T_start^-1 T_end))``."""

    kind = "linear"
    min_control_points = 2

    def __post_init__(self):
        super().__post_init__()
        if len(self.control_points) != 2:
            raise TrajectoryError("Linear trajectory takes exactly two control points")

    def pose(self, u):
        return self.pose_and_jacobians(u)[0]

    def pose_and_jacobians(self, u):
        return _cumulative_pose(self.control_points, [u])


def spline_weights(v):
    """Cumulative cubic B-spline basis at local parameter ``v``."""
    v2, v3 = v * v, v * v * v
    return [
        (5.0 + 3.0 * v - 3.0 * v2 + v3) / 6.0,
        (1.0 + 3.0 * v + 3.0 * v2 - 2.0 * v3) / 6.0,
        v3 / 6.0,
    ]


@dataclass(frozen=True, eq=False)
class SplineTrajectory(Trajectory):
    """Uniform cumulative cubic B-spline over four or more control points."""

    kind = "spline"
    min_control_points = 4

    def _segment(self, u):
        segments = len(self.control_points) - 3
        s = min(max(u, 0.0), 1.0) * segments
        i = min(int(np.floor(s)), segments - 1)
        return i, s - i

    def pose(self, u):
        return self.pose_and_jacobians(u)[0]

    def pose_and_jacobians(self, u):
        i, v = self._segment(u)
        pose, local = _cumulative_pose(self.control_points[i:i + 4], spline_weights(v))
        jacobians = np.zeros((len(self.control_points), 6, 6))
        jacobians[i:i + 4] = local
        return pose, jacobians


def bezier_pose(traj, t):
    return traj.pose_at(t)


def linear_pose(start, end, u):
    return LinearTrajectory((start, end)).pose(u)


def spline_pose(ctrl, u):
    return SplineTrajectory(tuple(ctrl)).pose(u)


TRAJECTORY_KINDS = {
    "bezier": BezierTrajectory,
    "linear": LinearTrajectory,
    "spline": SplineTrajectory,
}


def make_trajectory(kind, pose, control_points, exposure=1.0):
    """Zero-motion trajectory of ``kind`` with every control point at ``pose``."""
    if kind not in TRAJECTORY_KINDS:
        raise TrajectoryError(f"Unknown trajectory kind: {kind}")
    cls = TRAJECTORY_KINDS[kind]
    if kind == "linear":
        control_points = 2
    return cls.constant(pose, max(control_points, cls.min_control_points), exposure)
