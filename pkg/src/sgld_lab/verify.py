"""Verification suites run by ``sgld-lab verify``.

Each suite returns a list of :class:`~sgld_lab.oracle.Check` records.
"""

from __future__ import annotations

import math

import numpy as np

from . import nn
from .accountant import (
    simplified_step_bound,
    subsampled_gaussian_renyi,
    theorem1_step_term,
    validity_check,
)
from .numerics import QuadratureSpec, RngStream
from .oracle import (
    Check,
    Density1D,
    check_eq,
    check_le,
    hellinger_quadrature,
    invariance_suite,
    renyi_quadrature,
)
from .sgld import sgld_step

ACCOUNTANT_TAUS = (0.001, 0.01, 0.1)
ACCOUNTANT_SIGMA_SQS = (0.6, 1.0, 2.0, 4.0)
ACCOUNTANT_ORDERS = tuple(range(2, 33))


def accountant_suite(spec: QuadratureSpec = QuadratureSpec()) -> list[Check]:
    """Quadrature <= binomial sum, and binomial sum <= 2 lam tau^2 / sigma^2 where valid."""
    checks = []
    for tau in ACCOUNTANT_TAUS:
        for s2 in ACCOUNTANT_SIGMA_SQS:
            p = Density1D.two_component(0.0, 1.0, s2, tau)
            q = Density1D.gaussian(0.0, s2)
            for lam in ACCOUNTANT_ORDERS:
                formula = subsampled_gaussian_renyi(lam, tau, s2)
                quad, err = renyi_quadrature(float(lam), p, q, spec, return_error=True)
                tag = f"tau={tau:g} sigma_sq={s2:g} lam={lam}"
                checks.append(check_le(f"quadrature <= binomial sum [{tag}]", quad, formula, err))
                if validity_check(lam, tau, s2).valid:
                    checks.append(check_le(f"binomial sum <= simplified [{tag}]", formula, simplified_step_bound(lam, tau, s2), 0.0))
                if lam == 2:
                    closed = math.log1p(tau * tau * math.expm1(1.0 / s2))
                    checks.append(check_eq(f"order-2 closed form [{tag}]", formula, closed, 1e-12 * closed))
    return checks


def algebraic_identity_checks(count: int = 1000, seed: int = 0) -> list[Check]:
    """``2 lam tau^2 / sigma^2`` with ``tau = b/n``, ``beta = 1/b`` equals ``lam alpha L^2 / n^2``."""
    rng = np.random.default_rng(seed)
    checks = []
    for i in range(count):
        n = int(rng.integers(1, 100_000))
        b = int(rng.integers(1, n + 1))
        alpha = float(10.0 ** rng.uniform(-6, 1))
        clip = float(10.0 ** rng.uniform(-2, 2))
        lam = float(rng.uniform(0.5, 64.0))
        sigma_sq = 2.0 / (alpha * (1.0 / b) ** 2 * clip**2)
        lhs = simplified_step_bound(lam, b / n, sigma_sq, unsafe=True)
        rhs = theorem1_step_term(lam, alpha, clip, n)
        checks.append(check_eq(f"identity case {i}", lhs, rhs, 1e-12 * abs(rhs)))
    return checks


def finite_difference_gradients(widths, n_examples: int = 16, step: float = 1e-5, seed: int = 0):
    """Per-example backprop gradients next to central finite differences."""
    rng = RngStream(seed, stream_id=len(widths))
    spec = nn.MlpSpec(tuple(widths))
    params = nn.init(spec, rng.child(0)) + 0.1 * rng.child(1).normal(spec.n_params)
    x = rng.child(2).normal((n_examples, widths[0]))
    y = (rng.child(3).uniform(n_examples) * widths[-1]).astype(np.intp)
    _, analytic = nn.loss_and_per_example_gradients(params, spec, x, y)
    numeric = np.empty_like(analytic)
    for j in range(spec.n_params):
        e = np.zeros(spec.n_params)
        e[j] = step
        up = nn.per_example_losses(nn.forward(params + e, spec, x), y)
        down = nn.per_example_losses(nn.forward(params - e, spec, x), y)
        numeric[:, j] = (up - down) / (2.0 * step)
    return analytic, numeric


def gradient_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest per-example ``||a - f|| / max(||a||, ||f||)``."""
    diff = np.linalg.norm(analytic - numeric, axis=1)
    scale = np.maximum(np.linalg.norm(analytic, axis=1), np.linalg.norm(numeric, axis=1))
    return float(np.max(diff / np.where(scale > 0, scale, 1.0)))


def gradient_suite() -> list[Check]:
    checks = []
    for widths in ((4, 8, 3), (24, 32, 16, 2)):
        err = gradient_relative_error(*finite_difference_gradients(widths))
        checks.append(check_le(f"finite differences {widths}", err, 1e-5, 0.0))
    return checks


def noise_suite(steps: int = 100_000, alpha: float = 0.01, dims: int = 4, seed: int = 0) -> list[Check]:
    """Zero-gradient SGLD increments have per-coordinate variance ``2 alpha``."""
    rng = RngStream(seed, stream_id=0x401)
    w = np.zeros(dims)
    zero = np.zeros(dims)
    increments = np.empty((steps, dims))
    for t in range(steps):
        w_next = sgld_step(w, zero, alpha, None, rng)
        increments[t] = w_next - w
        w = w_next
    var = increments.var(axis=0, ddof=1)
    se = 2.0 * alpha * math.sqrt(2.0 / (steps - 1))
    return [check_eq(f"update variance coord {j}", float(var[j]), 2.0 * alpha, 3.0 * se) for j in range(dims)]


def hellinger_cases(count: int = 50, seed: int = 0):
    """Random Gaussian pairs and two-component mixture pairs."""
    rng = np.random.default_rng(seed)
    cases = []
    for i in range(count):
        var = float(rng.uniform(0.3, 3.0))
        if i % 2 == 0:
            p = Density1D.gaussian(float(rng.normal()), var)
            q = Density1D.gaussian(float(rng.normal()), var)
        else:
            p = Density1D.two_component(*rng.normal(size=2), var, float(rng.uniform()))
            q = Density1D.two_component(*rng.normal(size=2), var, float(rng.uniform()))
        cases.append((p, q))
    return cases


def hellinger_suite(spec: QuadratureSpec = QuadratureSpec()) -> list[Check]:
    checks = []
    for i, (p, q) in enumerate(hellinger_cases()):
        dh, e1 = hellinger_quadrature(p, q, spec, return_error=True)
        dhalf, e2 = renyi_quadrature(0.5, p, q, spec, return_error=True)
        checks.append(check_le(f"hellinger <= renyi(1/2) case {i} ({p.kind})", dh, dhalf, e1 + e2))
    return checks


SUITES = {
    "accountant": lambda: accountant_suite() + algebraic_identity_checks(),
    "gradients": gradient_suite,
    "noise": noise_suite,
    "invariances": lambda: invariance_suite() + hellinger_suite(),
}


def run_suite(name: str) -> dict[str, list[Check]]:
    names = list(SUITES) if name == "all" else [name]
    for n in names:
        if n not in SUITES:
            raise ValueError(f"unknown suite {n!r}")
    return {n: SUITES[n]() for n in names}
