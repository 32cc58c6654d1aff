import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from enman import tinynet
from enman.tinynet import (AdamState, MlpParams, NumericError,
                           ShapeError, StaleCacheError, adam_step, backward,
                           forward, gaussian_entropy, gaussian_logprob,
                           init_mlp, init_policy, init_value)


def zero_net(dims):
    return MlpParams([np.zeros((dims[i + 1], dims[i])) for i in range(len(dims) - 1)],
                     [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)])


class TestForward:
    def test_all_zero_params_give_zero_output(self):
        net = zero_net((5, 3, 1))
        out, _ = forward(net, np.ones(5))
        assert out == pytest.approx([0.0])

    def test_single_identity_layer_passes_input_through(self):
        net = MlpParams([np.array([[1.0]])], [np.zeros(1)])
        for x in (-2.5, 0.0, 3.75):
            out, _ = forward(net, np.array([x]))
            assert out[0] == x

    def test_deterministic_bitwise(self):
        net = init_mlp((5, 16, 2), seed=3)
        x = np.random.default_rng(1).normal(size=(7, 5))
        a, _ = forward(net, x)
        b, _ = forward(net, x)
        assert np.array_equal(a, b)

    def test_dimension_mismatch_raises(self):
        net = init_mlp((5, 4, 1), seed=0)
        with pytest.raises(ShapeError):
            forward(net, np.ones(4))

    def test_forward_is_pure(self):
        net = init_mlp((5, 8, 1), seed=0)
        before = [w.copy() for w in net.weights] + [b.copy() for b in net.biases]
        forward(net, np.random.default_rng(0).normal(size=(4, 5)))
        after = net.weights + net.biases
        assert all(np.array_equal(x, y) for x, y in zip(before, after))


def finite_diff_max_rel_err(net, x, gy, h=1e-5):
    """Central-difference oracle for backward(): max relative error."""
    _, cache = forward(net, x)
    gw, gb = backward(net, cache, gy)
    analytic = gw + gb

    def loss():
        out, _ = forward(net, x)
        return float(np.sum(out * gy))

    worst = 0.0
    for arr, grad in zip(net.weights + net.biases, analytic):
        flat = arr.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + h
            up = loss()
            flat[i] = orig - h
            down = loss()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            err = abs(gflat[i] - fd) / max(abs(gflat[i]), abs(fd), 1e-8)
            worst = max(worst, err)
    return worst


class TestBackward:
    def test_linear_net_weight_gradient_is_input(self):
        net = MlpParams([np.array([[2.0]])], [np.zeros(1)])
        x = np.array([3.0])
        _, cache = forward(net, x)
        gw, gb = backward(net, cache, np.array([1.0]))
        np.testing.assert_allclose(gw[0], [[3.0]])
        assert gb[0] == pytest.approx([1.0])

    def test_matches_finite_differences_on_random_net(self):
        rng = np.random.default_rng(11)
        net = init_mlp((5, 8, 2), seed=7)
        x = rng.normal(size=(3, 5))
        gy = rng.normal(size=(3, 2))
        assert finite_diff_max_rel_err(net, x, gy) <= 1e-4

    @settings(max_examples=12, deadline=None)
    @given(st.data())
    def test_gradient_check_across_shapes(self, data):
        widths = st.sampled_from([1, 5, 16, 64])
        n_layers = data.draw(st.integers(1, 3))
        dims = [data.draw(widths) for _ in range(n_layers + 1)]
        seed = data.draw(st.integers(0, 2**31))
        rng = np.random.default_rng(seed)
        net = init_mlp(tuple(dims), seed=seed)
        x = rng.normal(size=(2, dims[0]))
        gy = rng.normal(size=(2, dims[-1]))
        assert finite_diff_max_rel_err(net, x, gy) <= 1e-4

    def test_zero_output_grad_gives_zero_grads(self):
        net = init_mlp((5, 4, 1), seed=0)
        _, cache = forward(net, np.ones((2, 5)))
        gw, gb = backward(net, cache, np.zeros((2, 1)))
        assert all(np.all(g == 0) for g in gw + gb)

    def test_stale_cache_rejected(self):
        net1 = init_mlp((5, 4, 1), seed=0)
        net2 = init_mlp((5, 4, 1), seed=1)
        _, cache = forward(net1, np.ones(5))
        with pytest.raises(StaleCacheError):
            backward(net2, cache, np.ones(1))


class TestGaussianHead:
    def test_logprob_standard_normal_at_mean(self):
        assert gaussian_logprob(0.0, 0.0, 0.0) == pytest.approx(-0.9189385332046727)

    def test_logprob_standard_normal_one_sigma_out(self):
        assert gaussian_logprob(0.0, 0.0, 1.0) == pytest.approx(-1.4189385332046727)

    @given(st.floats(-50, 50), st.floats(-2, 2), st.floats(-50, 50),
           st.floats(-20, 20))
    def test_translation_invariance(self, mu, log_std, x, c):
        a = gaussian_logprob(mu, log_std, x)
        b = gaussian_logprob(mu + c, log_std, x + c)
        assert a == pytest.approx(b, abs=1e-9)

    @pytest.mark.parametrize("mu,log_std", [(0.0, 0.0), (2.0, 0.5), (-1.0, -1.0)])
    def test_density_integrates_to_one(self, mu, log_std):
        sigma = math.exp(log_std)
        grid = np.linspace(mu - 12 * sigma, mu + 12 * sigma, 20001)
        dens = np.exp(gaussian_logprob(mu, log_std, grid))
        assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-6)

    def test_entropy_values(self):
        assert gaussian_entropy(0.0) == pytest.approx(1.4189385332046727)
        assert gaussian_entropy(1.0) == pytest.approx(2.4189385332046727)

    @given(st.floats(-5, 5), st.floats(0.001, 5))
    def test_entropy_monotone_in_log_std(self, ls, step):
        assert gaussian_entropy(ls + step) > gaussian_entropy(ls)


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        params = [np.array([1.0, -2.0]), np.array([[3.0]])]
        state = AdamState.for_params(params, lr=1e-2)
        adam_step(state, params, [np.zeros(2), np.zeros((1, 1))])
        assert params[0] == pytest.approx([1.0, -2.0])
        np.testing.assert_allclose(params[1], [[3.0]])

    def test_first_step_magnitude_is_learning_rate(self):
        params = [np.array([1.0])]
        state = AdamState.for_params(params, lr=1e-3)
        adam_step(state, params, [np.array([7.0])])
        delta = params[0][0] - 1.0
        assert -1e-3 <= delta < -0.999e-3  # lr-sized step against the gradient

    def test_converges_on_quadratic_bowl(self):
        params = [np.array([0.0])]
        state = AdamState.for_params(params, lr=1e-2)
        for _ in range(5000):
            adam_step(state, params, [2.0 * (params[0] - 3.0)])
        assert abs(params[0][0] - 3.0) <= 1e-2

    def test_non_finite_gradient_rejected_without_side_effects(self):
        params = [np.array([1.0])]
        state = AdamState.for_params(params, lr=1e-2)
        with pytest.raises(NumericError):
            adam_step(state, params, [np.array([math.nan])])
        assert params[0][0] == 1.0
        assert state.step_count == 0
        assert np.all(state.m[0] == 0.0)


class TestInit:
    def test_fixed_seed_reproducible(self):
        a = init_mlp((5, 16, 1), seed=42)
        b = init_mlp((5, 16, 1), seed=42)
        assert all(np.array_equal(x, y) for x, y in zip(a.flat(), b.flat()))

    def test_weight_bounds_and_zero_biases(self):
        net = init_mlp((5, 64, 3), seed=0)
        for w in net.weights:
            assert np.all(np.abs(w) <= math.sqrt(1.0 / w.shape[1]))
        for b in net.biases:
            assert np.all(b == 0.0)

    def test_different_seeds_differ(self):
        a = init_mlp((5, 8, 1), seed=1)
        b = init_mlp((5, 8, 1), seed=2)
        assert any(not np.array_equal(x, y) for x, y in zip(a.flat(), b.flat()))

    def test_policy_head_scaled_down_and_log_std_zero(self):
        policy = init_policy((5, 64, 1), seed=0)
        head = policy.trunk.weights[-1]
        assert np.all(np.abs(head) <= 0.01 * math.sqrt(1.0 / head.shape[1]))
        assert policy.log_std[0] == 0.0
        assert policy.std == 1.0

    def test_dims_property(self):
        assert init_value((5, 32, 1), seed=0).dims == (5, 32, 1)

    def test_nonchaining_layers_rejected(self):
        with pytest.raises(ShapeError):
            MlpParams([np.zeros((4, 5)), np.zeros((1, 3))],
                      [np.zeros(4), np.zeros(1)])
