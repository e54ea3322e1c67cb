import json
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgld_lab.accountant import (
    DEFAULT_ORDERS,
    ExactSum,
    RenyiLedger,
    StepRecord,
    ValidityError,
    append_step,
    compose,
    effective_sigma_sq,
    simplified_step_bound,
    subsampled_gaussian_renyi,
    theorem1_step_term,
    theorem1_total,
    validity_check,
)

# 50-digit evaluations of the binomial sum (mpmath, direct term-by-term form)
MPMATH_REFERENCE = {
    (2, 0.01, 1.0): 0.00017181342207454793099,
    (8, 0.05, 2.0): 0.0086241229215834587637,
    (32, 0.001, 0.6): 19.536080572233492936,
    (16, 0.1, 4.0): 0.045291839083621958764,
    (256, 0.5, 1.0): 127.30413459520256471,
}


class TestEffectiveSigmaSq:
    @pytest.mark.parametrize(
        "alpha, weight, clip, expected",
        [(1.0, 1.0, 1.0, 2.0), (0.5, 1.0, 1.0, 4.0), (0.01, 0.1, 1.0, 20000.0)],
    )
    def test_examples(self, alpha, weight, clip, expected):
        assert effective_sigma_sq(alpha, weight, clip) == pytest.approx(expected, rel=1e-15)

    @pytest.mark.parametrize("args", [(0, 1, 1), (1, -1, 1), (1, 1, 0)])
    def test_nonpositive(self, args):
        with pytest.raises(ValueError, match="nonpositive parameter"):
            effective_sigma_sq(*args)


class TestValidityCheck:
    def test_valid(self):
        rep = validity_check(2, 0.01, 2.0)
        assert rep.valid
        assert rep.conditions[1].rhs == pytest.approx((4 / 3) * math.log(1 / 0.06), rel=1e-14)

    def test_sigma_too_small(self):
        rep = validity_check(2, 0.01, 0.4)
        assert not rep.valid
        assert "sigma_sq >= 0.53" in rep.failed

    def test_second_condition(self):
        rep = validity_check(2, 0.5, 2.0)
        assert not rep.valid
        assert len(rep.failed) == 1 and rep.failed[0].startswith("lam - 1")

    def test_tau_zero(self):
        assert validity_check(64, 0.0, 1.0).valid


class TestSubsampledGaussianRenyi:
    def test_tau_zero(self):
        assert subsampled_gaussian_renyi(2, 0.0, 1.0) == 0.0

    def test_order_two_example(self):
        expected = math.log1p(1e-4 * (math.e - 1))
        assert subsampled_gaussian_renyi(2, 0.01, 1.0) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(1.71814e-4, rel=1e-5)

    @pytest.mark.parametrize("key", sorted(MPMATH_REFERENCE))
    def test_mpmath_reference(self, key):
        assert subsampled_gaussian_renyi(*key) == pytest.approx(MPMATH_REFERENCE[key], rel=1e-13)

    def test_tau_one_is_gaussian_divergence(self):
        # full inclusion: N(1, s2) vs N(0, s2) has divergence lam / (2 s2)
        assert subsampled_gaussian_renyi(5, 1.0, 2.0) == pytest.approx(5 / 4, rel=1e-13)

    @pytest.mark.parametrize("lam", [1, 257, 2.5])
    def test_order_out_of_range(self, lam):
        with pytest.raises(ValueError):
            subsampled_gaussian_renyi(lam, 0.1, 1.0)

    @pytest.mark.parametrize("tau", [-0.1, 1.1])
    def test_tau_out_of_range(self, tau):
        with pytest.raises(ValueError):
            subsampled_gaussian_renyi(2, tau, 1.0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 63), st.floats(0.0, 1.0), st.floats(0.3, 10.0))
    def test_monotone_in_order(self, lam, tau, s2):
        a = subsampled_gaussian_renyi(lam, tau, s2)
        b = subsampled_gaussian_renyi(lam + 1, tau, s2)
        assert a >= 0
        assert b >= a * (1 - 1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 64), st.floats(0.0, 0.99), st.floats(0.0, 0.01), st.floats(0.3, 10.0))
    def test_monotone_in_tau(self, lam, tau, dt, s2):
        a = subsampled_gaussian_renyi(lam, tau, s2)
        b = subsampled_gaussian_renyi(lam, tau + dt, s2)
        assert b >= a * (1 - 1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1e-6, 1.0), st.floats(0.2, 20.0))
    def test_order_two_closed_form(self, tau, s2):
        closed = math.log1p(tau * tau * math.expm1(1.0 / s2))
        assert subsampled_gaussian_renyi(2, tau, s2) == pytest.approx(closed, rel=1e-12)


class TestSimplifiedBound:
    def test_examples(self):
        assert simplified_step_bound(2, 0.01, 2.0) == pytest.approx(2e-4, rel=1e-15)
        assert simplified_step_bound(2, 0.0, 2.0) == 0.0
        # (4, 0.01, 2) sits just outside the validity regime: 3 > (4/3) log(1/0.12)
        assert not validity_check(4, 0.01, 2.0).valid
        assert simplified_step_bound(4, 0.01, 2.0, unsafe=True) == pytest.approx(4e-4, rel=1e-15)

    def test_invalid_regime(self):
        with pytest.raises(ValidityError, match="validity conditions not met"):
            simplified_step_bound(2, 0.5, 2.0)
        assert simplified_step_bound(2, 0.5, 2.0, unsafe=True) == pytest.approx(0.5)


class TestTheorem1:
    def test_step_term(self):
        assert theorem1_step_term(2, 1.0, 1.0, 100) == pytest.approx(2e-4, rel=1e-15)
        assert theorem1_step_term(2, 0.0, 1.0, 100) == 0.0

    def test_step_term_equals_simplified(self):
        # tau = b/n = 0.01, beta = 1/b with b = 1, alpha = 1, L = 1 -> sigma^2 = 2
        assert theorem1_step_term(2, 1.0, 1.0, 100) == pytest.approx(simplified_step_bound(2, 0.01, 2.0), rel=1e-12)

    def test_step_term_n_zero(self):
        with pytest.raises(ValueError):
            theorem1_step_term(2, 1.0, 1.0, 0)

    def test_total(self):
        assert theorem1_total(2, 1.0, 100, (0.01,) * 10) == pytest.approx(2e-5, rel=1e-14)
        assert theorem1_total(2, 1.0, 100, ()) == 0.0

    def test_doubling_n(self):
        a = theorem1_total(3, 1.5, 100, (0.1, 0.2))
        assert theorem1_total(3, 1.5, 200, (0.1, 0.2)) == a / 4

    @settings(max_examples=200, deadline=None)
    @given(
        st.integers(1, 10**5).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n))),
        st.floats(1e-6, 10.0),
        st.floats(1e-2, 1e2),
        st.floats(0.5, 64.0),
    )
    def test_identity(self, nb, alpha, clip, lam):
        n, b = nb
        sigma_sq = 2.0 / (alpha * (1.0 / b) ** 2 * clip**2)
        lhs = simplified_step_bound(lam, b / n, sigma_sq, unsafe=True)
        assert lhs == pytest.approx(theorem1_step_term(lam, alpha, clip, n), rel=1e-12)


class TestExactSum:
    def test_matches_fsum(self):
        values = [1e16, 1.0, -1e16, 3.0, 1e-20] * 10
        s = ExactSum()
        for v in values:
            s.add(v)
        assert s.value == math.fsum(values)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1e10, 1e10), max_size=50), st.randoms())
    def test_order_independent(self, values, rnd):
        a, b = ExactSum(), ExactSum()
        for v in values:
            a.add(v)
        shuffled = list(values)
        rnd.shuffle(shuffled)
        for v in shuffled:
            b.add(v)
        assert a.value == b.value == math.fsum(values)


def _record(t, alpha=0.01, tau=0.01, n=100, clip=1.0):
    return StepRecord.from_schedule(t, alpha, tau, n, clip)


class TestStepRecord:
    def test_invariants(self):
        r = _record(0, alpha=0.05, tau=0.2, n=50, clip=2.0)
        assert r.batch_weight == pytest.approx(1 / 10)
        assert r.sigma_sq == pytest.approx(2 / (0.05 * 0.01 * 4), rel=1e-15)
        assert r.noise_variance == 0.1


class TestRenyiLedger:
    def test_single_step(self):
        ledger = RenyiLedger(100, (2.0,))
        append_step(ledger, _record(0))
        assert ledger.totals[2.0] == theorem1_step_term(2.0, 0.01, 1.0, 100)

    def test_two_steps(self):
        ledger = RenyiLedger(100, (2.0,))
        ledger.append(_record(0)).append(_record(1))
        assert ledger.totals[2.0] == 2 * theorem1_step_term(2.0, 0.01, 1.0, 100)

    def test_thirty_steps_match_closed_form(self):
        ledger = RenyiLedger(100)
        for t in range(30):
            ledger.append(_record(t))
        for lam, total in ledger.totals.items():
            assert total == pytest.approx(theorem1_total(lam, 1.0, 100, (0.01,) * 30), rel=1e-15)

    def test_empty(self):
        ledger = RenyiLedger(10)
        assert all(v == 0.0 for v in compose(ledger).values())

    def test_heterogeneous_schedule(self):
        ledger = RenyiLedger(100, (2.0,))
        for t, a in enumerate((0.1, 0.01, 0.001)):
            ledger.append(_record(t, alpha=a))
        assert ledger.totals[2.0] == pytest.approx(2.22e-5, rel=1e-14)

    def test_out_of_order(self):
        ledger = RenyiLedger(10)
        with pytest.raises(ValueError, match="out-of-order"):
            ledger.append(_record(1))

    def test_zero_alpha_step(self):
        ledger = RenyiLedger(100)
        ledger.append(_record(0))
        before = dict(ledger.totals)
        ledger.append(_record(1, alpha=0.0))
        assert ledger.totals == before

    def test_bad_orders(self):
        with pytest.raises(ValueError):
            RenyiLedger(10, (1.0,))
        with pytest.raises(ValueError):
            RenyiLedger(10, (0.25,))
        with pytest.raises(ValueError):
            RenyiLedger(0)

    def test_full_formula_uses_binomial_sum(self):
        ledger = RenyiLedger(100, (0.5, 2.0, 8.0), full_formula=True)
        r = _record(0, alpha=0.5, tau=0.1)
        ledger.append(r)
        assert ledger.totals[2.0] == subsampled_gaussian_renyi(2, 0.1, r.sigma_sq)
        assert ledger.totals[8.0] == subsampled_gaussian_renyi(8, 0.1, r.sigma_sq)
        assert ledger.totals[0.5] == theorem1_step_term(0.5, 0.5, 1.0, 100)

    def test_validity_flags(self):
        ledger = RenyiLedger(100, (2.0, 64.0))
        ledger.append(_record(0, alpha=0.01, tau=0.01))
        expected = [validity_check(lam, 0.01, 200.0).valid for lam in (2.0, 64.0)]
        assert ledger.validity[0] == expected
        ledger.append(_record(1, alpha=10.0, tau=0.01))
        assert not ledger.all_valid()

    def test_serialization_roundtrip(self):
        ledger = RenyiLedger(100, (0.5, 2.0))
        for t, a in enumerate((0.1, 0.2, 0.3)):
            ledger.append(_record(t, alpha=a))
        doc = json.loads(ledger.to_json())
        assert set(doc) >= {"dataset_size", "steps", "order_grid", "totals", "validity"}
        again = RenyiLedger.from_dict(doc)
        assert again.totals == ledger.totals
        assert again.validity == ledger.validity

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=40), st.randoms())
    def test_compose_properties(self, alphas, rnd):
        ledger = RenyiLedger(50, DEFAULT_ORDERS[:5])
        previous = {lam: 0.0 for lam in ledger.order_grid}
        for t, a in enumerate(alphas):
            ledger.append(_record(t, alpha=a, tau=0.1, n=50))
            for lam, v in ledger.totals.items():
                assert v >= previous[lam] >= 0.0
            previous = dict(ledger.totals)
        assert compose(ledger) == ledger.totals
        shuffled = list(alphas)
        rnd.shuffle(shuffled)
        other = RenyiLedger(50, DEFAULT_ORDERS[:5])
        for t, a in enumerate(shuffled):
            other.append(_record(t, alpha=a, tau=0.1, n=50))
        assert other.totals == ledger.totals

    def test_scaling_in_n(self):
        alphas = tuple(random.Random(4).uniform(0, 1) for _ in range(100))
        scaled = [theorem1_total(2.0, 1.3, n, alphas) * n**2 for n in (10**2, 10**3, 10**4)]
        np.testing.assert_allclose(scaled, scaled[0], rtol=1e-12)
