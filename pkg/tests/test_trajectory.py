import pytest
import numpy as np

from blursplat.liegroup import SE3Pose, left_twist_difference, se3_exp
from blursplat.trajectory import (
    BezierTrajectory,
    LinearTrajectory,
    SplineTrajectory,
    TrajectoryError,
    bezier_pose,
    linear_pose,
    make_trajectory,
    spline_pose,
    virtual_parameters,
)


def rotz(angle):
    c, s = np.cos(angle), np.sin(angle)
    return SE3Pose([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]], np.zeros(3))


def random_points(rng, count, scale=0.3):
    return tuple(se3_exp(rng.normal(scale=scale, size=6)) for _ in range(count))


class TestBezierTrajectory:
    def test_constant_curve(self, rng):
        pose = se3_exp(rng.normal(size=6) * 0.5)
        traj = BezierTrajectory((pose,) * 9)
        for u in np.linspace(0.0, 1.0, 11):
            assert traj.pose(u).distance(pose) < 1e-12

    def test_endpoints(self, rng):
        points = random_points(rng, 9)
        traj = BezierTrajectory(points)
        assert traj.pose(0.0).distance(points[0]) < 1e-12
        assert traj.pose(1.0).distance(points[-1]) < 1e-12

    def test_commuting_translations(self):
        traj = BezierTrajectory((SE3Pose.identity(), SE3Pose.from_translation([2.0, 0.0, 0.0])))
        pose = traj.pose(0.5)
        np.testing.assert_allclose(pose.translation, [1.0, 0.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(pose.rotation, np.eye(3), atol=1e-15)

    def test_pose_at_scales_time(self):
        traj = BezierTrajectory((SE3Pose.identity(), SE3Pose.from_translation([2.0, 0.0, 0.0])), exposure=0.5)
        np.testing.assert_allclose(bezier_pose(traj, 0.25).translation, [1.0, 0.0, 0.0], atol=1e-15)

    def test_time_outside_window(self):
        traj = BezierTrajectory((SE3Pose.identity(),) * 2, exposure=1.0)
        with pytest.raises(TrajectoryError):
            traj.pose_at(1.5)
        with pytest.raises(TrajectoryError):
            traj.pose_at(-0.1)

    def test_zero_exposure_rejected(self):
        with pytest.raises(TrajectoryError):
            BezierTrajectory((SE3Pose.identity(),) * 2, exposure=0.0)

    def test_single_control_point_rejected(self):
        with pytest.raises(TrajectoryError):
            BezierTrajectory((SE3Pose.identity(),))

    def test_poses_stay_orthonormal(self, rng):
        traj = BezierTrajectory(random_points(rng, 5, scale=0.8))
        for pose in traj.sample(15):
            assert pose.orthonormality_error() < 1e-9


class TestLinearAndSpline:
    def test_linear_start(self, rng):
        a, b = random_points(rng, 2)
        assert linear_pose(a, b, 0.0).distance(a) < 1e-12

    def test_linear_end(self, rng):
        a, b = random_points(rng, 2)
        assert linear_pose(a, b, 1.0).distance(b) < 1e-12

    def test_linear_geodesic_midpoint(self):
        pose = linear_pose(SE3Pose.identity(), rotz(np.pi / 2), 0.5)
        assert pose.distance(rotz(np.pi / 4)) < 1e-12

    def test_linear_needs_two_points(self):
        with pytest.raises(TrajectoryError):
            LinearTrajectory((SE3Pose.identity(),) * 3)

    def test_spline_constant(self, rng):
        pose = se3_exp(rng.normal(size=6) * 0.5)
        for u in (0.0, 0.3, 0.77, 1.0):
            assert spline_pose((pose,) * 6, u).distance(pose) < 1e-12

    def test_spline_needs_four_points(self):
        with pytest.raises(TrajectoryError):
            SplineTrajectory((SE3Pose.identity(),) * 3)

    def test_make_trajectory_kinds(self, identity_pose):
        assert make_trajectory("bezier", identity_pose, 9).degree == 8
        assert len(make_trajectory("linear", identity_pose, 9).control_points) == 2
        assert len(make_trajectory("spline", identity_pose, 2).control_points) == 4
        with pytest.raises(TrajectoryError):
            make_trajectory("circle", identity_pose, 4)


class TestVirtualParameters:
    def test_uniform_including_endpoints(self):
        np.testing.assert_allclose(virtual_parameters(5), [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_single_camera(self):
        np.testing.assert_array_equal(virtual_parameters(1), [0.0])

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            virtual_parameters(0)


def finite_difference_jacobians(traj, u, h=1e-6):
    base = traj.pose(u)
    points = list(traj.control_points)
    out = np.zeros((len(points), 6, 6))
    for j in range(len(points)):
        for a in range(6):
            d = np.zeros(6)
            d[a] = h
            plus = points.copy()
            minus = points.copy()
            plus[j] = se3_exp(d).compose(points[j])
            minus[j] = se3_exp(-d).compose(points[j])
            xi_plus = left_twist_difference(traj.with_control_points(plus).pose(u), base).as_vector()
            xi_minus = left_twist_difference(traj.with_control_points(minus).pose(u), base).as_vector()
            out[j, :, a] = (xi_plus - xi_minus) / (2.0 * h)
    return out


class TestControlPointJacobians:
    @pytest.mark.parametrize("u", [0.0, 0.3, 0.5, 1.0])
    def test_bezier(self, rng, u):
        traj = BezierTrajectory(random_points(rng, 4))
        _, jacobians = traj.pose_and_jacobians(u)
        np.testing.assert_allclose(jacobians, finite_difference_jacobians(traj, u), atol=1e-6)

    @pytest.mark.parametrize("u", [0.2, 0.9])
    def test_linear(self, rng, u):
        traj = LinearTrajectory(random_points(rng, 2))
        _, jacobians = traj.pose_and_jacobians(u)
        np.testing.assert_allclose(jacobians, finite_difference_jacobians(traj, u), atol=1e-6)

    @pytest.mark.parametrize("u", [0.1, 0.55, 1.0])
    def test_spline(self, rng, u):
        traj = SplineTrajectory(random_points(rng, 6))
        _, jacobians = traj.pose_and_jacobians(u)
        np.testing.assert_allclose(jacobians, finite_difference_jacobians(traj, u), atol=1e-6)

    def test_jacobian_pose_matches_pose(self, rng):
        traj = BezierTrajectory(random_points(rng, 9))
        pose, _ = traj.pose_and_jacobians(0.4)
        assert pose.distance(traj.pose(0.4)) < 1e-12

    def test_zero_retraction_keeps_points(self, rng):
        traj = BezierTrajectory(random_points(rng, 3))
        moved = traj.retract(np.zeros((3, 6)))
        for a, b in zip(traj.control_points, moved.control_points):
            assert a.distance(b) == 0.0
