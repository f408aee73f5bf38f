import pytest
import numpy as np

from blursplat.edi import DeblurredImage
from blursplat.liegroup import se3_exp
from blursplat.metrics import psnr
from blursplat.optimizer import (
    Adam,
    CheckpointError,
    NumericalError,
    OptimConfig,
    SupervisionError,
    TrainState,
    TrainView,
    checkpoint_load,
    checkpoint_save,
    compute_gradients,
    mcmc_grow,
    mcmc_relocate,
    photometric_loss,
    sgld_noise,
    train,
    train_step,
)
from blursplat.renderer import ImageBuffer, ImageRole, render, render_blurred
from blursplat.scene import PARAMETER_GROUPS, SceneModel, logit, sigmoid
from blursplat.trajectory import BezierTrajectory

QUIET = dict(sgld_noise=0.0, mcmc=False)


def blurred_target(scene, traj, camera, n, settings=None):
    image, _ = render_blurred(scene, traj, camera, n, settings)
    return ImageBuffer(image.pixels, exposure=image.exposure, role=ImageRole.OBSERVED)


def config(**overrides):
    base = dict(n_virtual=3, control_points=3, iterations=20, n_max=40, log_every=1)
    base.update(overrides)
    return OptimConfig(**base)


@pytest.fixture
def problem(make_scene, small_camera, motion):
    """Two views of a ground-truth scene seen along short Bézier motions."""
    scene = make_scene(12, seed=1)
    second = motion.with_control_points(tuple(se3_exp([0.05, 0, 0, 0, 0, 0]).compose(p) for p in motion.control_points))
    trajectories = [motion, second]
    views = [TrainView(i, blurred_target(scene, t, small_camera, 3)) for i, t in enumerate(trajectories)]
    return scene, trajectories, views


def perturbed_state(problem, small_camera, cfg, seed=0):
    scene, trajectories, _ = problem
    start = scene.copy()
    start.colors = np.clip(start.colors + 0.1, 0.0, 1.0)
    start.means = start.means + np.random.default_rng(seed).normal(scale=0.02, size=start.means.shape)
    moved = [t.retract(np.full((len(t.control_points), 6), 0.005)) for t in trajectories]
    return TrainState(start, moved, cfg, small_camera)


def assert_same_state(a, b):
    for name in PARAMETER_GROUPS:
        np.testing.assert_array_equal(getattr(a.scene, name), getattr(b.scene, name))
    for ta, tb in zip(a.trajectories, b.trajectories):
        for pa, pb in zip(ta.control_points, tb.control_points):
            np.testing.assert_array_equal(pa.as_matrix(), pb.as_matrix())


class TestPhotometricLoss:
    def test_identical_images(self, rng):
        image = rng.uniform(size=(16, 16, 3))
        loss, grad = photometric_loss(image, image, 0.2)
        assert loss == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_pure_l1(self, rng):
        target = rng.uniform(0.0, 0.8, size=(12, 12, 3))
        loss, grad = photometric_loss(target + 0.1, target, 0.0)
        assert loss == pytest.approx(0.1)
        np.testing.assert_allclose(grad, 1.0 / target.size)

    def test_gradient_matches_finite_differences(self, rng):
        pred = rng.uniform(size=(32, 32, 3))
        target = rng.uniform(size=(32, 32, 3))
        _, grad = photometric_loss(pred, target, 0.2)
        h = 1e-6
        for _ in range(20):
            index = tuple(rng.integers(0, n) for n in pred.shape)
            up, down = pred.copy(), pred.copy()
            up[index] += h
            down[index] -= h
            numeric = (photometric_loss(up, target, 0.2)[0] - photometric_loss(down, target, 0.2)[0]) / (2 * h)
            assert grad[index] == pytest.approx(numeric, rel=1e-3)

    def test_shape_mismatch(self):
        from blursplat.renderer import ShapeMismatchError

        with pytest.raises(ShapeMismatchError):
            photometric_loss(np.zeros((12, 12, 3)), np.zeros((12, 13, 3)))


class TestOptimConfig:
    def test_defaults(self):
        cfg = OptimConfig()
        assert (cfg.n_virtual, cfg.control_points, cfg.iterations, cfg.lr_pose) == (15, 9, 7000, 1e-3)
        assert cfg.relocate_opacity_eps == 0.005

    @pytest.mark.parametrize("kwargs", [{"n_virtual": 0}, {"control_points": 1}, {"lambda_dssim": 1.5},
                                        {"trajectory": "circle"}, {"n_max": 0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            OptimConfig(**kwargs)

    def test_from_dict(self):
        cfg = OptimConfig.from_dict({"lambda": 0.3, "iterations": 10, "scene": {"gaussians": 5}})
        assert cfg.lambda_dssim == 0.3 and cfg.iterations == 10
        with pytest.raises(ValueError):
            OptimConfig.from_dict({"iteration": 10})

    def test_load(self, tmp_path):
        (tmp_path / "train.toml").write_text("n_virtual = 5\nlr_pose = 0.002\n")
        cfg = OptimConfig.load(tmp_path / "train.toml")
        assert cfg.n_virtual == 5 and cfg.lr_pose == 0.002

    def test_replace_ignores_none(self):
        assert OptimConfig().replace(n_virtual=None, seed=3).n_virtual == 15

    def test_modes(self):
        cfg = OptimConfig()
        assert not cfg.for_mode("no-mcmc").mcmc
        assert cfg.for_mode("no-trajopt").lr_pose == 0.0
        assert cfg.for_mode("gems-e") is cfg
        with pytest.raises(ValueError):
            cfg.for_mode("fast")


class TestAdam:
    def test_first_step_is_signed_learning_rate(self):
        step = Adam().step("x", np.array([3.0, -0.5, 0.0]), 0.1)
        np.testing.assert_allclose(step, [0.1, -0.1, 0.0])

    def test_row_bookkeeping(self):
        adam = Adam()
        adam.step("x", np.ones((3, 2)), 0.1)
        adam.reset_rows("x", [1])
        adam.append_rows("x", 2)
        assert adam.m["x"].shape == (5, 2)
        np.testing.assert_array_equal(adam.v["x"][1], 0.0)
        assert sorted(adam.arrays()) == ["adam_m/x", "adam_v/x"]


class TestTrainView:
    def test_rejects_deblurred_images(self, small_camera):
        image = ImageBuffer(np.zeros(small_camera.shape), role=ImageRole.DEBLURRED)
        with pytest.raises(SupervisionError):
            TrainView(0, image)
        with pytest.raises(SupervisionError):
            TrainView(0, DeblurredImage(image))

    def test_rejects_raw_arrays(self, small_camera):
        with pytest.raises(SupervisionError):
            TrainView(0, np.zeros(small_camera.shape))


class TestTrainStep:
    def test_fixed_point(self, problem, small_camera):
        scene, trajectories, views = problem
        state = TrainState(scene.copy(), list(trajectories), config(**QUIET), small_camera)
        before = {name: getattr(state.scene, name).copy() for name in PARAMETER_GROUPS}
        train_step(state, views[:1])
        assert state.last_loss < 1e-6
        for name in PARAMETER_GROUPS:
            assert np.abs(getattr(state.scene, name) - before[name]).max() < 1e-6
        for a, b in zip(state.trajectories[0].control_points, trajectories[0].control_points):
            assert a.distance(b) < 1e-6

    def test_frozen_poses_and_decreasing_loss(self, problem, small_camera):
        cfg = config(lr_pose=0.0, views_per_step=2, **QUIET)
        state = perturbed_state(problem, small_camera, cfg)
        initial = [list(t.control_points) for t in state.trajectories]
        history = train(state, problem[2], 50, progress=False)
        assert history["loss"][-1] < history["loss"][0]
        for traj, points in zip(state.trajectories, initial):
            assert all(a is b for a, b in zip(traj.control_points, points))

    def test_quaternions_and_opacities_stay_valid(self, problem, small_camera):
        state = perturbed_state(problem, small_camera, config(lr_opacity=0.5))
        train(state, problem[2], 10, progress=False)
        np.testing.assert_allclose(np.linalg.norm(state.scene.quats, axis=1), 1.0, atol=1e-9)
        assert np.all((state.scene.opacities > 0.0) & (state.scene.opacities < 1.0))

    def test_repeatable_without_noise(self, problem, small_camera):
        runs = []
        for _ in range(2):
            state = perturbed_state(problem, small_camera, config(sgld_noise=0.0, relocate_every=4))
            train(state, problem[2], 9, progress=False)
            runs.append(state)
        assert_same_state(*runs)

    def test_seeded_noise_is_repeatable(self, problem, small_camera):
        runs = []
        for _ in range(2):
            state = perturbed_state(problem, small_camera, config(seed=5))
            train(state, problem[2], 5, progress=False)
            runs.append(state)
        assert_same_state(*runs)

    def test_non_finite_update_aborts(self, problem, small_camera, tmp_path):
        state = perturbed_state(problem, small_camera, config(lr_colors=float("inf"), **QUIET))
        with pytest.raises(NumericalError) as info:
            train_step(state, problem[2])
        assert info.value.group == "colors"
        info.value.dump(tmp_path / "nan_dump.npz")
        with np.load(tmp_path / "nan_dump.npz") as dump:
            assert dump["values"].shape == state.scene.colors.shape

    def test_history_columns(self, problem, small_camera):
        views = [TrainView(v.index, v.target, p.mid_pose) for v, p in zip(problem[2], problem[1])]
        state = perturbed_state(problem, small_camera, config(log_every=2, **QUIET))
        history = train(state, views, 6, progress=False)
        assert history["iteration"].to_list() == [2, 4, 6]
        assert history.columns == ["iteration", "loss", "psnr", "ape", "n_gaussians", "n_relocated"]
        assert history["ape"].is_not_nan().all()


class TestControlPointGradients:
    def test_full_pipeline_matches_finite_differences(self, make_scene, small_camera, motion, exact_settings):
        scene = make_scene(10, seed=6)
        target = ImageBuffer(np.random.default_rng(2).uniform(size=small_camera.shape), role=ImageRole.OBSERVED)
        cfg = config(**QUIET)
        state = TrainState(scene, [motion], cfg, small_camera, exact_settings)
        _, _, grads, pose_grads = compute_gradients(state, [TrainView(0, target)])

        def loss(traj, s=scene):
            pred, _ = render_blurred(s, traj, small_camera, cfg.n_virtual, exact_settings)
            return photometric_loss(pred, target, cfg.lambda_dssim)[0]

        h = 1e-6
        for j in range(len(motion.control_points)):
            for k in range(6):
                step = np.zeros(6)
                step[k] = h

                def moved(delta):
                    points = list(motion.control_points)
                    points[j] = se3_exp(delta).compose(points[j])
                    return motion.with_control_points(tuple(points))

                numeric = (loss(moved(step)) - loss(moved(-step))) / (2 * h)
                assert pose_grads[0][j, k] == pytest.approx(numeric, rel=1e-3, abs=1e-7), (j, k)

        for i in (0, 4):
            for axis in range(3):
                up, down = scene.copy(), scene.copy()
                up.colors[i, axis] += h
                down.colors[i, axis] -= h
                numeric = (loss(motion, up) - loss(motion, down)) / (2 * h)
                assert grads["colors"][i, axis] == pytest.approx(numeric, rel=1e-3, abs=1e-7)


class TestRelocation:
    def test_no_dead_gaussians(self, small_scene, small_camera, identity_pose):
        state = TrainState(small_scene, [], config(n_max=20), small_camera)
        before = {name: getattr(state.scene, name).copy() for name in PARAMETER_GROUPS}
        assert mcmc_relocate(state) == 0
        for name in PARAMETER_GROUPS:
            np.testing.assert_array_equal(getattr(state.scene, name), before[name])

    def test_split_preserves_opacity(self, small_camera):
        scene = SceneModel(
            [[0.0, 0.0, 4.0], [0.3, 0.1, 5.0]], None, np.log(np.full((2, 3), 0.2)),
            logit([0.001, 0.75]), [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        )
        state = TrainState(scene, [], config(n_max=2), small_camera)
        assert mcmc_relocate(state) == 1
        np.testing.assert_allclose(state.scene.opacities, [0.5, 0.5], atol=1e-12)
        np.testing.assert_array_equal(state.scene.means[0], state.scene.means[1])
        np.testing.assert_array_equal(state.scene.colors[0], [0.0, 1.0, 0.0])

    def test_render_barely_changes(self, make_scene, small_camera, identity_pose):
        scene = make_scene(40, seed=8)
        scene.opacity_logits[[3, 17]] = logit(0.001)
        before = render(scene, identity_pose, small_camera)
        state = TrainState(scene, [], config(n_max=40), small_camera)
        assert mcmc_relocate(state) == 2
        after = render(state.scene, identity_pose, small_camera)
        assert psnr(before, after) > 30.0

    def test_growth_respects_capacity(self, make_scene, small_camera):
        state = TrainState(make_scene(20), [], config(n_max=21, growth_rate=0.5), small_camera)
        assert mcmc_grow(state) == 1
        assert len(state.scene) == 21
        assert mcmc_grow(state) == 0

    def test_count_bounded_during_training(self, problem, small_camera):
        cfg = config(n_max=14, relocate_every=2, growth_rate=0.1, lr_opacity=0.3)
        state = perturbed_state(problem, small_camera, cfg)
        state.scene.opacity_logits[:3] = logit(0.001)
        history = train(state, problem[2], 12, progress=False)
        assert history["n_gaussians"].max() <= 14
        assert len(state.scene) <= 14
        assert history["n_relocated"].sum() > 0


class TestCheckpoint:
    def test_resume_is_bitwise(self, problem, small_camera, tmp_path):
        cfg = config(relocate_every=3, growth_rate=0.2, seed=2)
        views = problem[2]
        unbroken = perturbed_state(problem, small_camera, cfg)
        train(unbroken, views, 8, progress=False)

        first = perturbed_state(problem, small_camera, cfg)
        train(first, views, 4, progress=False)
        checkpoint_save(first, tmp_path / "checkpoint.gmsk")
        resumed = checkpoint_load(tmp_path / "checkpoint.gmsk")
        assert resumed.iteration == 4
        train(resumed, views, 8, progress=False)
        assert_same_state(resumed, unbroken)

    def test_roundtrip_fields(self, problem, small_camera, tmp_path):
        state = perturbed_state(problem, small_camera, config())
        checkpoint_save(state, tmp_path / "c.gmsk")
        loaded = checkpoint_load(tmp_path / "c.gmsk")
        assert loaded.camera == small_camera
        assert loaded.config == state.config
        assert loaded.extent == state.extent
        assert all(isinstance(t, BezierTrajectory) for t in loaded.trajectories)
        assert_same_state(loaded, state)

    def test_larger_capacity(self, problem, small_camera, tmp_path):
        state = perturbed_state(problem, small_camera, config(n_max=20))
        checkpoint_save(state, tmp_path / "c.gmsk")
        loaded = checkpoint_load(tmp_path / "c.gmsk", n_max=60)
        assert loaded.scene.capacity == 60
        assert loaded.config.n_max == 60
        with pytest.raises(CheckpointError):
            checkpoint_load(tmp_path / "c.gmsk", n_max=5)

    def test_version_mismatch(self, problem, small_camera, tmp_path):
        path = tmp_path / "c.gmsk"
        checkpoint_save(perturbed_state(problem, small_camera, config()), path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = np.array([7], dtype="<u4").tobytes()
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            checkpoint_load(path)

    def test_corrupt_payload(self, problem, small_camera, tmp_path):
        path = tmp_path / "c.gmsk"
        checkpoint_save(perturbed_state(problem, small_camera, config()), path)
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(CheckpointError):
            checkpoint_load(path)

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / "c.gmsk").write_bytes(b"hello world!")
        with pytest.raises(CheckpointError):
            checkpoint_load(tmp_path / "c.gmsk")
        with pytest.raises(CheckpointError):
            checkpoint_load(tmp_path / "absent.gmsk")


class TestLangevinNoise:
    @pytest.fixture
    def opaque_scene(self, make_scene):
        return make_scene(400, seed=3, opacity=(0.5, 0.9))

    def test_plain_rule_is_isotropic(self, opaque_scene, small_camera, motion):
        cfg = config(sgld_noise=1.0, sgld_covariance_shaped=False)
        state = TrainState(opaque_scene, [motion], cfg, small_camera)
        noise = sgld_noise(state, 1.0)
        assert noise.shape == (400, 3)
        assert np.std(noise) == pytest.approx(1.0, rel=0.1)
        assert abs(np.mean(noise)) < 0.1

    def test_plain_rule_scales_with_learning_rate(self, opaque_scene, small_camera, motion):
        cfg = config(sgld_noise=50.0, sgld_covariance_shaped=False)
        state = TrainState(opaque_scene, [motion], cfg, small_camera)
        assert np.std(sgld_noise(state, 1e-3)) == pytest.approx(0.05, rel=0.1)

    def test_shaped_rule_spares_opaque_gaussians(self, opaque_scene, small_camera, motion):
        cfg = config(sgld_noise=1.0, sgld_covariance_shaped=True)
        state = TrainState(opaque_scene, [motion], cfg, small_camera)
        assert np.abs(sgld_noise(state, 1.0)).max() < 1e-12

    def test_shaped_rule_moves_transparent_gaussians(self, make_scene, small_camera, motion):
        scene = make_scene(50, seed=4, opacity=(0.0005, 0.002))
        cfg = config(sgld_noise=3.0, sgld_covariance_shaped=True)
        state = TrainState(scene, [motion], cfg, small_camera, seed=7)
        noise = sgld_noise(state, 0.5)

        z = np.random.default_rng(7).normal(size=(50, 3)) * 1.5
        gate = sigmoid(-100.0 * (state.scene.opacities - cfg.relocate_opacity_eps))
        expected = np.einsum("nij,nj->ni", state.scene.covariances(), z * gate[:, None])
        np.testing.assert_allclose(noise, expected, rtol=1e-12, atol=1e-15)
        assert np.all(np.linalg.norm(noise, axis=1) > 0.0)
