import math

import numpy as np
import pytest

from shipens import fnn
from shipens.fnn import AdamState, NetShape, adam_step, backward, forward, init_params


def finite_diff_params(shape, theta, x, g, h=1e-5):
    """Central-difference gradient of sum(g * net(x)) w.r.t. theta."""
    fd = np.empty_like(theta)
    for i in range(len(theta)):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        fd[i] = (np.sum(forward(tp, shape, x)[0] * g)
                 - np.sum(forward(tm, shape, x)[0] * g)) / (2 * h)
    return fd


class TestForward:
    def test_zero_weights_output_final_bias(self):
        shape = NetShape(4, 2, 3, 2)
        theta = np.zeros(shape.n_params)
        w, b, _ = fnn.layer_slices(shape)[-1]
        theta[b] = [1.5, -0.5]
        for x in (np.zeros(4), np.random.default_rng(0).normal(size=(6, 4))):
            y, _ = forward(theta, shape, x)
            np.testing.assert_allclose(np.atleast_2d(y), [[1.5, -0.5]] * np.atleast_2d(y).shape[0])

    def test_hand_computed_tiny_net(self):
        # 2 -> 2 -> 1: y = W2 tanh(W1 x + b1) + b2
        shape = NetShape(2, 1, 2, 1)
        w1 = np.array([[0.5, -1.0], [2.0, 0.25]])
        b1 = np.array([0.1, -0.2])
        w2 = np.array([[1.0, -2.0]])
        b2 = np.array([0.3])
        theta = np.concatenate([w1.ravel(), b1, w2.ravel(), b2])
        x = np.array([0.7, -0.4])
        hidden = np.tanh(w1 @ x + b1)
        expected = w2 @ hidden + b2
        y, _ = forward(theta, shape, x)
        np.testing.assert_allclose(y, expected, atol=1e-12)

    def test_tanh_keeps_hidden_activations_bounded(self):
        shape = NetShape(3, 2, 8, 3)
        theta = 100.0 * np.ones(shape.n_params)
        _, tape = forward(theta, shape, np.ones(3))
        for a in tape.inputs[1:]:
            assert np.all(np.abs(a) <= 1.0)  # tanh saturates to exactly 1.0 in float64
            assert np.all(np.abs(a) > 0.9)

    def test_dimension_mismatch_rejected(self):
        shape = NetShape(3, 1, 2, 1)
        theta = init_params(shape, np.random.default_rng(1))
        with pytest.raises(ValueError):
            forward(theta, shape, np.zeros(4))
        with pytest.raises(ValueError):
            forward(theta[:-1], shape, np.zeros(3))


class TestBackward:
    @pytest.mark.parametrize("n_hidden", [1, 2, 3])
    @pytest.mark.parametrize("width", [2, 8])
    def test_gradient_matches_finite_differences(self, n_hidden, width):
        rng = np.random.default_rng(n_hidden * 10 + width)
        shape = NetShape(5, n_hidden, width, 3)
        theta = init_params(shape, rng)
        x = rng.standard_normal((4, 5))
        g = rng.standard_normal((4, 3))
        y, tape = forward(theta, shape, x)
        grad, gx = backward(tape, g)
        fd = finite_diff_params(shape, theta, x, g)
        assert np.max(np.abs(grad - fd) / (np.abs(fd) + 1e-8)) < 1e-6

    def test_input_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        shape = NetShape(4, 2, 6, 2)
        theta = init_params(shape, rng)
        x = rng.standard_normal(4)
        g = rng.standard_normal(2)
        _, tape = forward(theta, shape, x)
        _, gx = backward(tape, g)
        h = 1e-6
        fd = np.empty(4)
        for i in range(4):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            fd[i] = (forward(theta, shape, xp)[0] @ g - forward(theta, shape, xm)[0] @ g) / (2 * h)
        np.testing.assert_allclose(gx, fd, rtol=1e-6, atol=1e-9)

    def test_zero_upstream_gives_zero_gradients(self):
        rng = np.random.default_rng(4)
        shape = NetShape(3, 1, 4, 2)
        theta = init_params(shape, rng)
        _, tape = forward(theta, shape, rng.standard_normal(3))
        grad, gx = backward(tape, np.zeros(2))
        assert np.all(grad == 0) and np.all(gx == 0)

    def test_linearity_in_upstream(self):
        rng = np.random.default_rng(5)
        shape = NetShape(3, 2, 4, 2)
        theta = init_params(shape, rng)
        _, tape = forward(theta, shape, rng.standard_normal((5, 3)))
        g1 = rng.standard_normal((5, 2))
        g2 = rng.standard_normal((5, 2))
        ga, _ = backward(tape, g1)
        gb, _ = backward(tape, g2)
        gc, _ = backward(tape, 2.0 * g1 - 0.5 * g2)
        np.testing.assert_allclose(gc, 2.0 * ga - 0.5 * gb, atol=1e-12)

    def test_mismatched_upstream_rejected(self):
        rng = np.random.default_rng(6)
        shape = NetShape(3, 1, 4, 2)
        theta = init_params(shape, rng)
        _, tape = forward(theta, shape, rng.standard_normal((5, 3)))
        with pytest.raises(ValueError):
            backward(tape, np.zeros((4, 2)))


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        theta = np.array([1.0, -2.0, 0.5])
        state = AdamState.fresh(3, lr=0.1)
        state2, theta2 = adam_step(state, theta, np.zeros(3))
        assert np.array_equal(theta2, theta)
        assert state2.step == 1

    def test_first_step_magnitude_near_lr(self):
        theta = np.zeros(4)
        state = AdamState.fresh(4, lr=1e-3)
        _, theta2 = adam_step(state, theta, np.array([3.0, -7.0, 0.5, 100.0]))
        np.testing.assert_allclose(np.abs(theta2), 1e-3, rtol=1e-6)

    def test_quadratic_bowl_converges(self):
        theta = np.array([5.0, -3.0])
        state = AdamState.fresh(2, lr=0.05)
        losses = []
        for _ in range(1000):
            grad = 2.0 * theta
            losses.append(float(theta @ theta))
            state, theta = adam_step(state, theta, grad)
        assert losses[-1] < 1e-3
        # decreasing trend after warm-up (Adam wiggles step to step near the
        # optimum, so compare window means)
        means = [np.mean(losses[i:i + 100]) for i in range(100, 1000, 100)]
        assert all(b < a for a, b in zip(means, means[1:]))

    def test_lr_zero_is_identity(self):
        theta = np.array([1.0, 2.0])
        state = AdamState.fresh(2, lr=0.0)
        _, theta2 = adam_step(state, theta, np.array([10.0, -10.0]))
        assert np.array_equal(theta2, theta)

    def test_non_finite_gradient_rejected(self):
        state = AdamState.fresh(2)
        with pytest.raises(FloatingPointError):
            adam_step(state, np.zeros(2), np.array([1.0, math.nan]))


class TestInitParams:
    def test_seed_reproducibility(self):
        shape = NetShape(8, 3, 16, 3)
        a = init_params(shape, np.random.default_rng(7))
        b = init_params(shape, np.random.default_rng(7))
        c = init_params(shape, np.random.default_rng(8))
        assert np.array_equal(a, b)
        assert np.max(np.abs(a - c)) > 0

    def test_fan_in_bounds(self):
        shape = NetShape(4, 2, 16, 3)
        theta = init_params(shape, np.random.default_rng(9))
        for w, b, (n_out, n_in) in fnn.layer_slices(shape):
            bound = 1.0 / math.sqrt(n_in)
            assert np.all(np.abs(theta[w]) <= bound)
            assert np.all(np.abs(theta[b]) <= bound)


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        shape = NetShape(6, 2, 5, 4)
        theta = init_params(shape, np.random.default_rng(10))
        path = tmp_path / "net.npz"
        fnn.save_params(path, shape, theta, extra={"aux": np.arange(3.0)})
        shape2, theta2, extras = fnn.load_params(path)
        assert shape2 == shape
        assert np.array_equal(theta2, theta)
        assert np.array_equal(extras["aux"], np.arange(3.0))
