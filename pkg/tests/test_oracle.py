import math

import numpy as np
import pytest

from sgld_lab.accountant import effective_sigma_sq, subsampled_gaussian_renyi
from sgld_lab.oracle import (
    Density1D,
    check_eq,
    check_le,
    gaussian_renyi_closed_form,
    hellinger_quadrature,
    invariance_suite,
    mixture_mass,
    renyi_quadrature,
    sgld_one_step_densities,
)


class TestDensity1D:
    def test_validation(self):
        with pytest.raises(ValueError):
            Density1D.gaussian(0.0, 0.0)
        with pytest.raises(ValueError):
            Density1D(np.array([0.0, 1.0]), np.array([0.3, 0.3]), 1.0)
        with pytest.raises(ValueError):
            Density1D.two_component(0.0, 1.0, 1.0, 1.5)

    def test_kind(self):
        assert Density1D.gaussian(0, 1).kind == "gaussian"
        assert Density1D.two_component(0, 1, 1, 0.5).kind == "mixture"
        assert Density1D.two_component(0, 1, 1, 0.0).kind == "gaussian"

    def test_mass(self):
        assert mixture_mass(Density1D.two_component(0.0, 1.0, 1.0, 0.1)) == pytest.approx(1.0, abs=1e-9)


class TestClosedForm:
    def test_examples(self):
        assert gaussian_renyi_closed_form(2, 0.3, 0.3, 1.0) == 0.0
        assert gaussian_renyi_closed_form(2, 0.0, 1.0, 1.0) == 1.0
        assert gaussian_renyi_closed_form(3, 1.0, -2.0, 2.0) == gaussian_renyi_closed_form(3, -2.0, 1.0, 2.0)

    def test_invalid_order(self):
        with pytest.raises(ValueError):
            gaussian_renyi_closed_form(1.0, 0, 1, 1)
        with pytest.raises(ValueError):
            gaussian_renyi_closed_form(0.4, 0, 1, 1)


class TestRenyiQuadrature:
    def test_identical(self):
        p = Density1D.two_component(0.0, 1.0, 1.0, 0.3)
        assert abs(renyi_quadrature(2.0, p, p)) <= 1e-9

    def test_gaussian_pair(self):
        d = renyi_quadrature(2.0, Density1D.gaussian(0, 1), Density1D.gaussian(1, 1))
        assert d == pytest.approx(1.0, abs=1e-8)

    @pytest.mark.parametrize("lam", [0.5, 1.5, 3.0, 8.0, 32.0])
    def test_against_closed_form(self, lam):
        d = renyi_quadrature(lam, Density1D.gaussian(0.2, 0.7), Density1D.gaussian(-0.5, 0.7))
        assert d == pytest.approx(gaussian_renyi_closed_form(lam, 0.2, -0.5, 0.7), rel=1e-8)

    def test_mixture_below_formula(self):
        p = Density1D.two_component(0.0, 1.0, 1.0, 0.01)
        d, err = renyi_quadrature(2.0, p, Density1D.gaussian(0.0, 1.0), return_error=True)
        assert d <= math.log1p(1e-4 * (math.e - 1)) + err

    def test_mixture_equals_binomial_sum(self):
        # the binomial sum is the exact divergence of this mixture, not just a bound
        p = Density1D.two_component(0.0, 1.0, 2.0, 0.05)
        d = renyi_quadrature(8.0, p, Density1D.gaussian(0.0, 2.0))
        assert d == pytest.approx(subsampled_gaussian_renyi(8, 0.05, 2.0), rel=1e-9)

    def test_monotone_in_order(self):
        p = Density1D.two_component(0.0, 1.5, 0.8, 0.2)
        q = Density1D.gaussian(0.3, 0.8)
        values = [renyi_quadrature(lam, p, q) for lam in (0.5, 2.0, 4.0, 8.0)]
        assert values == sorted(values)


class TestHellingerQuadrature:
    def test_identical(self):
        p = Density1D.gaussian(0.0, 1.0)
        assert hellinger_quadrature(p, p) == 0.0

    def test_gaussian_closed_form(self):
        # equal variances: D_H = 1 - exp(-d^2 / (8 s^2))
        got = hellinger_quadrature(Density1D.gaussian(0, 1.5), Density1D.gaussian(2, 1.5))
        assert got == pytest.approx(1 - math.exp(-4 / 12), rel=1e-9)

    @pytest.mark.parametrize("shift", [0.1, 1.0, 5.0, 40.0])
    def test_bounded_and_dominated(self, shift):
        p, q = Density1D.gaussian(0, 1), Density1D.two_component(shift, -shift, 1.0, 0.4)
        dh = hellinger_quadrature(p, q)
        assert 0.0 <= dh <= 1.0 + 1e-12
        assert dh <= renyi_quadrature(0.5, p, q) + 1e-9


class TestOneStepDensities:
    def test_tau_zero(self):
        p, q = sgld_one_step_densities(0.4, [1.0, 2.0], [0.5, -1.0], 0, alpha=0.1, tau=0.0, clip_bound=1.0)
        for d in (p, q):
            np.testing.assert_array_equal(d.means, [0.4])
            assert d.variance == pytest.approx(0.2)
        assert renyi_quadrature(2.0, p, q) == pytest.approx(0.0, abs=1e-12)

    def test_tau_one_single_example(self):
        w, alpha, clip = 0.3, 0.2, 1.0
        x, y = np.array([2.0]), np.array([-1.0])
        p, q = sgld_one_step_densities(w, x, y, 0, alpha=alpha, tau=1.0, clip_bound=clip)
        g = np.clip((w * x - y) * x, -clip, clip)[0]
        np.testing.assert_allclose(p.means, [w - alpha * g])
        np.testing.assert_allclose(q.means, [w])
        expected = gaussian_renyi_closed_form(2.0, p.means[0], w, 2 * alpha)
        assert renyi_quadrature(2.0, p, q) == pytest.approx(expected, rel=1e-8)

    def test_integrates_to_one(self):
        rng = np.random.default_rng(1)
        p, q = sgld_one_step_densities(0.0, rng.normal(size=8), rng.normal(size=8), 3, 0.5, 0.3, 1.0)
        assert p.weights.size == 256 and q.weights.size == 128
        assert mixture_mass(p) == pytest.approx(1.0, abs=1e-9)
        assert mixture_mass(q) == pytest.approx(1.0, abs=1e-9)

    def test_below_accountant_bound(self):
        rng = np.random.default_rng(2)
        n, tau, alpha, clip = 6, 0.3, 0.5, 1.0
        s2 = effective_sigma_sq(alpha, 1.0 / (tau * n), clip)
        for _ in range(20):
            x, y = rng.normal(size=n), rng.normal(size=n)
            p, q = sgld_one_step_densities(float(rng.normal()), x, y, int(rng.integers(n)), alpha, tau, clip)
            d, err = renyi_quadrature(2.0, p, q, return_error=True)
            assert d <= subsampled_gaussian_renyi(2, tau, s2) + err

    def test_enumeration_cap(self):
        with pytest.raises(ValueError, match="enumeration too large"):
            sgld_one_step_densities(0.0, np.ones(13), np.ones(13), 0, 0.1, 0.5, 1.0)


class TestChecks:
    def test_to_dict(self):
        c = check_le("x", 1.0, 2.0, 0.0)
        assert c.to_dict() == {"name": "x", "lhs": 1.0, "rhs": 2.0, "tolerance": 0.0, "pass": True}
        assert not check_eq("y", 1.0, 1.1, 0.01).passed

    def test_invariance_suite(self):
        checks = invariance_suite()
        assert len(checks) == 24
        assert all(c.passed for c in checks), [c for c in checks if not c.passed]
