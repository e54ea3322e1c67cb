import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgld_lab import nn
from sgld_lab.numerics import RngStream
from sgld_lab.verify import finite_difference_gradients, gradient_relative_error


class TestSpec:
    def test_layout(self):
        spec = nn.MlpSpec((4, 8, 3))
        assert spec.n_params == 4 * 8 + 8 + 8 * 3 + 3
        assert spec.hidden_widths == (8,)
        layers = spec.unflatten(np.arange(spec.n_params, dtype=float))
        np.testing.assert_array_equal(layers[0][0][0], np.arange(8))
        np.testing.assert_array_equal(layers[0][1], np.arange(32, 40))

    def test_validation(self):
        with pytest.raises(ValueError):
            nn.MlpSpec((3,))
        with pytest.raises(ValueError):
            nn.MlpSpec((3, 0, 2))
        with pytest.raises(ValueError):
            nn.MlpSpec((3, 2), dropout_rate=1.0)
        with pytest.raises(ValueError):
            nn.LossSpec(0.0)


class TestInit:
    def test_deterministic(self):
        spec = nn.MlpSpec((2, 1))
        a = nn.init(spec, RngStream(5))
        np.testing.assert_array_equal(a, nn.init(spec, RngStream(5)))
        assert a.shape == (3,)
        assert a[2] == 0.0

    def test_biases_zero(self):
        spec = nn.MlpSpec((5, 7, 3))
        for _, b in spec.unflatten(nn.init(spec, RngStream(0))):
            np.testing.assert_array_equal(b, 0.0)

    def test_variance(self):
        spec = nn.MlpSpec((100, 100))
        w, _ = spec.unflatten(nn.init(spec, RngStream(3)))[0]
        assert w.var() == pytest.approx(2.0 / 200, rel=0.05)


class TestForward:
    def test_identity(self):
        spec = nn.MlpSpec((3, 3))
        params = np.concatenate([np.eye(3).ravel(), np.zeros(3)])
        x = np.array([0.5, -1.0, 2.0])
        np.testing.assert_array_equal(nn.forward(params, spec, x), x)

    def test_zero_rate_mask_has_no_effect(self):
        spec = nn.MlpSpec((4, 6, 2))
        params = nn.init(spec, RngStream(0))
        x = RngStream(1).normal((5, 4))
        mask = nn.dropout_mask(spec, RngStream(2), 5)
        np.testing.assert_array_equal(nn.forward(params, spec, x, mask), nn.forward(params, spec, x))

    def test_inverted_scaling(self):
        spec = nn.MlpSpec((2, 3, 3), dropout_rate=0.5)
        w1 = np.abs(RngStream(0).normal((2, 3)))
        params = np.concatenate([w1.ravel(), np.zeros(3), np.eye(3).ravel(), np.zeros(3)])
        x = np.array([1.0, 2.0])
        ones = [np.ones(3)]
        np.testing.assert_allclose(nn.forward(params, spec, x, ones), 2 * nn.forward(params, spec, x))

    def test_dimension_mismatch(self):
        spec = nn.MlpSpec((4, 2))
        with pytest.raises(ValueError):
            nn.forward(np.zeros(spec.n_params), spec, np.zeros(3))

    def test_batch_permutation_equivariance(self):
        spec = nn.MlpSpec((4, 8, 3))
        params = nn.init(spec, RngStream(0))
        x = RngStream(1).normal((10, 4))
        perm = RngStream(2).permutation(10)
        np.testing.assert_array_equal(nn.forward(params, spec, x)[perm], nn.forward(params, spec, x[perm]))


class TestDropoutMask:
    def test_rate_zero(self):
        for m in nn.dropout_mask(nn.MlpSpec((3, 4, 5, 2)), RngStream(0)):
            np.testing.assert_array_equal(m, 1.0)

    def test_keep_fraction(self):
        spec = nn.MlpSpec((3, 10_000, 2), dropout_rate=0.5)
        (m,) = nn.dropout_mask(spec, RngStream(0))
        assert abs(m.mean() - 0.5) <= 0.015

    def test_deterministic(self):
        spec = nn.MlpSpec((3, 20, 2), dropout_rate=0.3)
        np.testing.assert_array_equal(nn.dropout_mask(spec, RngStream(9))[0], nn.dropout_mask(spec, RngStream(9))[0])


class TestLoss:
    def test_uniform_logits(self):
        spec = nn.MlpSpec((2, 4))
        losses, _ = nn.loss_and_per_example_gradients(np.zeros(spec.n_params), spec, np.ones((3, 2)), [0, 1, 3])
        np.testing.assert_allclose(losses, math.log(4), rtol=1e-15)

    def test_confident_margin(self):
        loss = nn.per_example_losses(np.array([[30.0, 0.0]]), np.array([0]))
        assert loss[0] < 1e-12

    def test_truncation(self):
        spec = nn.MlpSpec((3, 5, 2))
        params = 5 * nn.init(spec, RngStream(0))
        x = 4 * RngStream(1).normal((50, 3))
        y = (RngStream(2).uniform(50) > 0.5).astype(int)
        full, g_full = nn.loss_and_per_example_gradients(params, spec, x, y)
        cut, g_cut = nn.loss_and_per_example_gradients(params, spec, x, y, nn.LossSpec(1.0))
        assert cut.max() <= 1.0
        below = full < 1.0
        assert below.any() and (~below).any()
        np.testing.assert_array_equal(cut[below], full[below])
        np.testing.assert_array_equal(g_cut[below], g_full[below])
        np.testing.assert_array_equal(g_cut[~below], 0.0)

    def test_non_finite(self):
        spec = nn.MlpSpec((2, 2))
        with pytest.raises(FloatingPointError, match="non-finite activation"):
            nn.loss_and_per_example_gradients(np.full(spec.n_params, np.inf), spec, np.ones((1, 2)), [0])

    def test_empty_batch(self):
        spec = nn.MlpSpec((2, 2))
        with pytest.raises(ValueError):
            nn.loss_and_per_example_gradients(np.zeros(spec.n_params), spec, np.zeros((0, 2)), [])


class TestGradients:
    @pytest.mark.parametrize("widths", [(4, 8, 3), (24, 32, 16, 2), (3, 2)])
    def test_finite_differences(self, widths):
        assert gradient_relative_error(*finite_difference_gradients(widths)) <= 1e-5

    def test_dropout_gradients(self):
        spec = nn.MlpSpec((4, 6, 3), dropout_rate=0.5)
        params = nn.init(spec, RngStream(0)) + 0.1
        x = RngStream(1).normal((5, 4))
        y = np.array([0, 1, 2, 1, 0])
        mask = nn.dropout_mask(spec, RngStream(2), 5)
        _, g = nn.loss_and_per_example_gradients(params, spec, x, y, dropout_mask=mask)
        h = 1e-6
        for j in range(0, spec.n_params, 7):
            e = np.zeros(spec.n_params)
            e[j] = h
            up = nn.per_example_losses(nn.forward(params + e, spec, x, mask), y)
            dn = nn.per_example_losses(nn.forward(params - e, spec, x, mask), y)
            np.testing.assert_allclose(g[:, j], (up - dn) / (2 * h), atol=1e-7)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_independent_of_batch(self, batch, seed):
        spec = nn.MlpSpec((3, 5, 2))
        params = nn.init(spec, RngStream(seed))
        x = RngStream(seed, 1).normal((batch, 3))
        y = np.arange(batch) % 2
        _, g_all = nn.loss_and_per_example_gradients(params, spec, x, y)
        _, g_one = nn.loss_and_per_example_gradients(params, spec, x[-1:], y[-1:])
        np.testing.assert_allclose(g_all[-1], g_one[0], rtol=1e-13, atol=1e-15)


class TestEvaluate:
    def test_separable(self):
        spec = nn.MlpSpec((1, 2))
        params = np.array([-10.0, 10.0, 0.0, 0.0])
        x = np.array([[-1.0], [-2.0], [1.0], [3.0]])
        m = nn.evaluate(params, spec, x, np.array([0, 0, 1, 1]))
        assert m.accuracy == 1.0

    def test_constant_logits_break_ties_low(self):
        spec = nn.MlpSpec((2, 2))
        m = nn.evaluate(np.zeros(spec.n_params), spec, np.ones((4, 2)), np.array([0, 1, 0, 1]))
        assert m.accuracy == 0.5
        assert m.mean_loss == pytest.approx(math.log(2))

    def test_max_loss_truncated(self):
        spec = nn.MlpSpec((2, 2))
        params = np.array([50.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        m = nn.evaluate(params, spec, np.ones((2, 2)), np.array([1, 1]), nn.LossSpec(2.0))
        assert m.max_loss == 2.0

    def test_empty(self):
        with pytest.raises(ValueError):
            nn.evaluate(np.zeros(6), nn.MlpSpec((2, 2)), np.zeros((0, 2)), np.zeros(0, dtype=int))
