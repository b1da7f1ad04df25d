"""Loss, noise synthesis, optimizer, and the two training phases."""

import math

import numpy as np
import pytest
from conftest import synthetic_image

from proxdenoise.errors import BadArgument, DegenerateLoss, NonFiniteLoss, ShapeMismatch
from proxdenoise.network import (
    desk_architecture,
    init_network,
    network_forward,
    parameters,
)
from proxdenoise.training import (
    HIGH_NOISE_GRID,
    LOW_NOISE_GRID,
    Adam,
    TrainConfig,
    awgn,
    default_learning_rate,
    greedy_train,
    joint_train,
    psnr,
    psnr_loss,
    train_full,
)
from proxdenoise.verify import fd_inplace, rel_error


def tiny_arch(variant="local", stages=1):
    return desk_architecture(
        variant=variant, stages=stages, filters=4, kernel=(3, 3), group_size=3, window=(7, 7)
    )


class TestPSNR:
    def test_uniform_offsets(self):
        x = np.zeros((8, 8, 1))
        assert psnr(x + 255.0, x) == pytest.approx(0.0, abs=1e-12)
        assert psnr(x + 25.5, x) == pytest.approx(20.0, abs=1e-12)
        assert psnr(x + 2.55, x) == pytest.approx(40.0, abs=1e-10)

    def test_matches_mse_form(self, rng):
        a = rng.uniform(0, 255, (9, 7, 3))
        b = rng.uniform(0, 255, (9, 7, 3))
        mse = np.mean((a - b) ** 2)
        assert psnr(a, b) == pytest.approx(10.0 * math.log10(255.0**2 / mse), rel=1e-12)

    def test_symmetry_and_shape_check(self, rng):
        a = rng.uniform(0, 255, (5, 5, 1))
        b = rng.uniform(0, 255, (5, 5, 1))
        assert psnr(a, b) == psnr(b, a)
        with pytest.raises(ShapeMismatch):
            psnr(a, b[:4])

    def test_exact_match_degenerate(self, rng):
        a = rng.uniform(0, 255, (5, 5, 1))
        with pytest.raises(DegenerateLoss):
            psnr(a, a.copy())


class TestPSNRLoss:
    def test_loss_is_negated_psnr(self, rng):
        a = rng.uniform(0, 255, (6, 6, 1))
        b = rng.uniform(0, 255, (6, 6, 1))
        loss, _ = psnr_loss(a, b)
        assert loss == pytest.approx(-psnr(a, b), rel=1e-12)

    def test_uniform_error_gradient(self):
        # e = c everywhere: grad = 20 / (ln 10 * c * N) at every sample
        x = np.zeros((4, 4, 1))
        c = 5.0
        _, grad = psnr_loss(x + c, x)
        want = 20.0 / (math.log(10.0) * c * x.size)
        np.testing.assert_allclose(grad, want, rtol=1e-12)

    def test_gradient_matches_fd(self, rng):
        for _ in range(10):
            x = rng.uniform(0, 255, (5, 6, 1))
            xhat = x + rng.standard_normal(x.shape) * 10.0

            def f():
                return psnr_loss(xhat, x)[0]

            _, grad = psnr_loss(xhat, x)
            # FD steps scale with the O(100) pixel values, so allow some
            # truncation error
            assert rel_error(fd_inplace(f, xhat), grad) < 1e-6

    def test_gradient_dtype_follows_estimate(self, rng):
        x = rng.uniform(0, 255, (5, 5, 1)).astype(np.float32)
        xhat = (x + 3.0).astype(np.float32)
        _, grad = psnr_loss(xhat, x)
        assert grad.dtype == np.float32

    def test_exact_reconstruction_degenerate(self, rng):
        a = rng.uniform(0, 255, (5, 5, 1))
        with pytest.raises(DegenerateLoss):
            psnr_loss(a, a.copy())


class TestAWGN:
    def test_sigma_zero_identity(self, rng):
        x = rng.uniform(0, 255, (7, 7, 1)).astype(np.float32)
        np.testing.assert_array_equal(awgn(x, 0.0, 3), x)

    def test_deterministic_per_seed(self, rng):
        x = rng.uniform(0, 255, (7, 7, 1))
        np.testing.assert_array_equal(awgn(x, 10.0, 42), awgn(x, 10.0, 42))
        assert not np.array_equal(awgn(x, 10.0, 42), awgn(x, 10.0, 43))

    def test_sample_statistics(self):
        x = np.zeros((256, 256, 1))
        n = awgn(x, 20.0, 0)
        assert abs(n.mean()) < 0.5
        assert n.std() == pytest.approx(20.0, rel=0.02)

    def test_dtype_preserved(self):
        x = np.zeros((6, 6, 1), dtype=np.float32)
        assert awgn(x, 5.0, 1).dtype == np.float32

    def test_negative_sigma_rejected(self):
        with pytest.raises(BadArgument):
            awgn(np.zeros((4, 4, 1)), -1.0, 0)

    def test_generator_stream_advances(self):
        # passing a Generator consumes it, so two draws differ
        g = np.random.default_rng(9)
        x = np.zeros((5, 5, 1))
        assert not np.array_equal(awgn(x, 5.0, g), awgn(x, 5.0, g))


class TestAdam:
    def test_zero_gradient_is_a_fixed_point(self):
        p = {"w": np.array([1.5, -2.0])}
        opt = Adam(p, lr=0.1)
        for _ in range(3):
            opt.step(p, {"w": np.zeros(2)})
        np.testing.assert_array_equal(p["w"], [1.5, -2.0])

    def test_first_step_magnitude(self):
        # bias correction makes the first step lr * g / (|g| + eps)
        p = {"w": np.array([1.0])}
        opt = Adam(p, lr=0.1, eps=1e-4)
        opt.step(p, {"w": np.array([2.0])})
        assert p["w"][0] == pytest.approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-4), rel=1e-12)

    def test_sign_symmetry(self):
        p = {"w": np.array([0.0, 0.0])}
        opt = Adam(p, lr=0.05)
        opt.step(p, {"w": np.array([3.0, -3.0])})
        assert p["w"][0] == pytest.approx(-p["w"][1], rel=1e-12)

    def test_quadratic_bowl_converges(self):
        p = {"w": np.array([10.0])}
        opt = Adam(p, lr=0.1)
        for _ in range(500):
            opt.step(p, {"w": 2.0 * (p["w"] - 3.0)})
        assert abs(p["w"][0] - 3.0) < 1e-3

    def test_updates_in_place(self):
        w = np.array([1.0])
        p = {"w": w}
        Adam(p, lr=0.1).step(p, {"w": np.array([1.0])})
        assert p["w"] is w

    def test_bad_lr(self):
        with pytest.raises(BadArgument):
            Adam({"w": np.zeros(1)}, lr=0.0)


class TestConfig:
    def test_noise_grids(self):
        assert LOW_NOISE_GRID == (5, 9, 13, 17, 21, 25, 29)
        assert HIGH_NOISE_GRID == (30, 34, 38, 42, 46, 50, 54)

    def test_default_learning_rates(self):
        assert default_learning_rate(1) == 1e-3
        assert default_learning_rate(3) == 1e-2
        assert TrainConfig(lr=None).resolve_lr(1) == 1e-3
        assert TrainConfig(lr=0.5).resolve_lr(1) == 0.5

    def test_validation(self):
        with pytest.raises(BadArgument):
            TrainConfig(epochs=-1)
        with pytest.raises(BadArgument):
            TrainConfig(batch_size=0)
        with pytest.raises(BadArgument):
            TrainConfig(noise_grid=())
        with pytest.raises(BadArgument):
            TrainConfig(noise_grid=(5.0, 0.0))


class TestGreedy:
    def make_images(self, n=3, size=24):
        return [synthetic_image(s, size, size) for s in range(n)]

    def test_single_stage_updates_every_parameter(self):
        images = self.make_images()
        config = TrainConfig(epochs=2, batch_size=2, seed=1, lr=1e-3)
        params = greedy_train(images, tiny_arch(), config)
        fresh = parameters(init_network(tiny_arch(), seed=1))
        for name, value in parameters(params).items():
            assert np.isfinite(value).all(), name
            if name.endswith(".alpha"):
                # the radius scale has an exactly-zero gradient while every
                # projection stays strictly inside its ball, so a short run
                # may leave it at the initial value
                continue
            assert not np.array_equal(value, fresh[name]), name

    def test_zero_epochs_returns_initialization(self):
        images = self.make_images()
        config = TrainConfig(epochs=0, seed=4)
        params = greedy_train(images, tiny_arch(stages=2), config)
        fresh = parameters(init_network(tiny_arch(stages=2), seed=4))
        for name, value in parameters(params).items():
            np.testing.assert_array_equal(value, fresh[name])

    def test_deterministic(self):
        images = self.make_images()
        config = TrainConfig(epochs=1, batch_size=2, seed=7, lr=1e-3)
        a = parameters(greedy_train(images, tiny_arch(), config))
        b = parameters(greedy_train(images, tiny_arch(), config))
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_empty_training_set(self):
        with pytest.raises(BadArgument):
            greedy_train([], tiny_arch(), TrainConfig(epochs=1))

    def test_channel_mismatch(self):
        images = [synthetic_image(0, 16, 16, channels=3)]
        with pytest.raises(ShapeMismatch):
            greedy_train(images, tiny_arch(), TrainConfig(epochs=1))

    def test_nonfinite_input_aborts(self):
        images = [np.full((16, 16, 1), np.inf, dtype=np.float32)]
        with np.errstate(invalid="ignore"), pytest.raises(NonFiniteLoss):
            greedy_train(images, tiny_arch(), TrainConfig(epochs=1, batch_size=1))


class TestJoint:
    def test_zero_epochs_no_change_empty_log(self):
        params = init_network(tiny_arch(stages=2), seed=2)
        before = {k: v.copy() for k, v in parameters(params).items()}
        images = [synthetic_image(0, 20, 20)]
        out, log = joint_train(params, images, TrainConfig(epochs=0))
        assert log == []
        for name, value in parameters(out).items():
            np.testing.assert_array_equal(value, before[name])

    def test_loss_log_length_and_finiteness(self):
        params = init_network(tiny_arch(stages=2), seed=3)
        images = [synthetic_image(s, 20, 20) for s in range(2)]
        _, log = joint_train(params, images, TrainConfig(epochs=3, batch_size=2, lr=1e-4))
        assert len(log) == 3
        assert all(math.isfinite(v) for v in log)

    def test_training_improves_fixed_batch(self):
        # with a modest rate the joint phase should lower the loss on the
        # task it optimizes; compare start vs end on a frozen noisy pair
        arch = tiny_arch(stages=2)
        images = [synthetic_image(s, 24, 24) for s in range(4)]
        clean = synthetic_image(9, 24, 24)
        noisy = awgn(clean, 21.0, 77)

        def score(p):
            return psnr(network_forward(noisy, 21.0, p), clean)

        params = init_network(arch, seed=5)
        start = score(params)
        trained, _ = joint_train(
            params, images, TrainConfig(epochs=10, batch_size=4, lr=3e-3, noise_grid=(21.0,))
        )
        assert score(trained) > start

    def test_full_pipeline_runs(self):
        images = [synthetic_image(s, 20, 20) for s in range(2)]
        params, log = train_full(
            images, tiny_arch(stages=2), TrainConfig(epochs=1, batch_size=2, lr=1e-4)
        )
        assert len(log) == 1
        for value in parameters(params).values():
            assert np.isfinite(value).all()
