"""Independent numerical checks of the divergence claims.

Divergences here are computed by brute force: explicit 1-D Gaussian mixtures
integrated with adaptive quadrature in log space. Nothing in this module
calls into the accountant's formulas except to compare against them.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Sequence

import numpy as np

from .numerics import (
    LOG_2PI,
    QuadratureSpec,
    adaptive_quadrature,
    log_sum_exp_axis,
)

SUPPORT_SDS = 10.0
MAX_ENUMERATION = 12


@dataclasses.dataclass(frozen=True)
class Density1D:
    """A 1-D Gaussian mixture with a shared component variance.

    A single Gaussian is the one-component case.
    """

    means: np.ndarray
    weights: np.ndarray
    variance: float

    def __post_init__(self):
        means = np.atleast_1d(np.asarray(self.means, dtype=np.float64))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        if means.shape != weights.shape:
            raise ValueError("means and weights must have the same length")
        if not self.variance > 0:
            raise ValueError("nonpositive variance")
        if np.any(weights < 0) or not math.isclose(weights.sum(), 1.0, rel_tol=1e-12):
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        keep = weights > 0
        object.__setattr__(self, "means", means[keep])
        object.__setattr__(self, "weights", weights[keep])

    @classmethod
    def gaussian(cls, mean: float, variance: float) -> "Density1D":
        return cls(np.array([mean]), np.array([1.0]), variance)

    @classmethod
    def two_component(cls, mean0: float, mean1: float, variance: float, weight1: float) -> "Density1D":
        if not 0.0 <= weight1 <= 1.0:
            raise ValueError("mixture weight must lie in [0, 1]")
        return cls(np.array([mean0, mean1]), np.array([1.0 - weight1, weight1]), variance)

    @property
    def kind(self) -> str:
        return "gaussian" if self.means.size == 1 else "mixture"

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)

    def log_pdf(self, x: np.ndarray, chunk: int = 1 << 22) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        flat = x.ravel()
        log_w = np.log(self.weights)
        out = np.empty_like(flat)
        step = max(1, chunk // self.means.size)
        norm = -0.5 * (LOG_2PI + math.log(self.variance))
        for start in range(0, flat.size, step):
            xs = flat[start : start + step]
            d = xs[:, None] - self.means[None, :]
            out[start : start + step] = log_sum_exp_axis(log_w - d * d / (2.0 * self.variance)) + norm
        return out.reshape(x.shape)

    def pdf(self, x):
        return np.exp(self.log_pdf(x))


def _check_order(lam: float) -> None:
    if not lam >= 0.5 or lam == 1.0:
        raise ValueError(f"Renyi order must be >= 0.5 and != 1, got {lam}")


def gaussian_renyi_closed_form(lam: float, mean1: float, mean2: float, variance: float) -> float:
    """Order-``lam`` divergence between equal-variance Gaussians."""
    _check_order(lam)
    if not variance > 0:
        raise ValueError("nonpositive variance")
    return lam * (mean1 - mean2) ** 2 / (2.0 * variance)


def _window(p: Density1D, q: Density1D, lam: float | None = None):
    sd = max(p.sd, q.sd)
    means = np.concatenate([p.means, q.means])
    lo, hi = means.min(), means.max()
    if lam is not None:
        # p^lam q^(1-lam) peaks near lam*m_p + (1-lam)*m_q, outside the hull of means when lam > 1
        ends = [lam * p.means.min() + (1 - lam) * q.means.max(), lam * p.means.max() + (1 - lam) * q.means.min()]
        lo, hi = min(lo, *ends), max(hi, *ends)
    breaks = np.unique(np.concatenate([means, [lo, hi]]))
    if breaks.size > 64:
        breaks = np.linspace(lo, hi, 65)
    return lo - SUPPORT_SDS * sd, hi + SUPPORT_SDS * sd, breaks


def _log_integral(log_f, a, b, breaks, spec: QuadratureSpec):
    grid = np.linspace(a, b, 4001)
    shift = float(np.max(log_f(grid)))
    value, err = adaptive_quadrature(lambda x: np.exp(log_f(x) - shift), a, b, spec, breakpoints=breaks)
    return shift, value, err


def renyi_quadrature(
    lam: float,
    p: Density1D,
    q: Density1D,
    spec: QuadratureSpec = QuadratureSpec(),
    return_error: bool = False,
):
    """``1/(lam-1) log int p^lam q^(1-lam)`` by adaptive quadrature in log space.

    With ``return_error`` the result is ``(value, error_estimate)`` where the
    error is propagated from the quadrature estimate.
    """
    _check_order(lam)
    a, b, breaks = _window(p, q, lam)

    def log_f(x):
        return lam * p.log_pdf(x) + (1.0 - lam) * q.log_pdf(x)

    shift, integral, err = _log_integral(log_f, a, b, breaks, spec)
    value = (shift + math.log(integral)) / (lam - 1.0)
    if return_error:
        return value, err / integral / abs(lam - 1.0)
    return value


def hellinger_quadrature(p: Density1D, q: Density1D, spec: QuadratureSpec = QuadratureSpec(), return_error=False):
    """Squared Hellinger distance ``1/2 int (sqrt p - sqrt q)^2``."""
    a, b, breaks = _window(p, q)

    def f(x):
        d = np.exp(0.5 * p.log_pdf(x)) - np.exp(0.5 * q.log_pdf(x))
        return 0.5 * d * d

    value, err = adaptive_quadrature(f, a, b, spec, breakpoints=breaks)
    return (value, err) if return_error else value


def mixture_mass(p: Density1D, spec: QuadratureSpec = QuadratureSpec()) -> float:
    a, b, breaks = _window(p, p)
    return adaptive_quadrature(p.pdf, a, b, spec, breakpoints=breaks)[0]


def clipped_regression_gradient(w: float, x: np.ndarray, y: np.ndarray, clip_bound: float) -> np.ndarray:
    """Per-example gradient of ``0.5 (w x - y)^2``, clipped to ``|g| <= clip_bound``."""
    g = (w * x - y) * x
    return np.clip(g, -clip_bound, clip_bound)


def _subset_mixture(w_prev, grads, alpha, tau, beta) -> Density1D:
    n = grads.size
    masks = (np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1
    counts = masks.sum(axis=1)
    means = w_prev - alpha * beta * (masks @ grads)
    # 0 ** 0 == 1 keeps the tau in {0, 1} edge cases exact
    weights = np.power(tau, counts) * np.power(1.0 - tau, n - counts)
    weights /= weights.sum()
    return Density1D(means, weights, 2.0 * alpha)


def sgld_one_step_densities(
    w_prev: float,
    x: Sequence[float],
    y: Sequence[float],
    removed_index: int,
    alpha: float,
    tau: float,
    clip_bound: float,
    batch_weight: float | None = None,
) -> tuple[Density1D, Density1D]:
    """Exact one-step SGLD output densities on ``S`` and on ``S`` minus one example.

    The model is scalar linear regression with squared loss. Both densities
    are mixtures over every Poisson batch, each batch contributing
    ``N(w_prev - alpha * batch_weight * sum(clipped grads), 2 alpha)``. The
    batch weight defaults to ``1 / (tau n)`` with ``n = |S|`` and is shared by
    both datasets.

    Returns:
        ``(p, q)``: the density under ``S`` and under the reduced dataset.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    if n > MAX_ENUMERATION:
        raise ValueError("enumeration too large")
    if not 0 <= removed_index < n:
        raise IndexError("removed_index out of range")
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if batch_weight is None:
        batch_weight = 1.0 / (tau * n) if tau > 0 else 1.0
    grads = clipped_regression_gradient(w_prev, x, y, clip_bound)
    p = _subset_mixture(w_prev, grads, alpha, tau, batch_weight)
    q = _subset_mixture(w_prev, np.delete(grads, removed_index), alpha, tau, batch_weight)
    return p, q


@dataclasses.dataclass(frozen=True)
class Check:
    name: str
    lhs: float
    rhs: float
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "tolerance": self.tolerance, "pass": self.passed}


def check_le(name: str, lhs: float, rhs: float, tolerance: float) -> Check:
    return Check(name, float(lhs), float(rhs), float(tolerance), bool(lhs <= rhs + tolerance))


def check_eq(name: str, lhs: float, rhs: float, tolerance: float) -> Check:
    return Check(name, float(lhs), float(rhs), float(tolerance), bool(abs(lhs - rhs) <= tolerance))


def invariance_suite(seed: int = 0, spec: QuadratureSpec = QuadratureSpec()) -> list[Check]:
    """Numerical spot checks of translation invariance, additivity and quasi-convexity."""
    checks = []

    base = renyi_quadrature(2.0, Density1D.gaussian(0.0, 1.0), Density1D.gaussian(1.0, 1.0), spec)
    for a in (-5.0, 7.0):
        shifted = renyi_quadrature(2.0, Density1D.gaussian(a, 1.0), Density1D.gaussian(a + 1.0, 1.0), spec)
        checks.append(check_eq(f"translation a={a:g} vs a=0", shifted, base, 1e-8))

    # product of independent coordinates: divergence adds across coordinates
    delta = np.array([1.0, 2.0])
    joint = 2.0 * float(delta @ delta) / 2.0
    per_coord = sum(gaussian_renyi_closed_form(2.0, 0.0, d, 1.0) for d in delta)
    checks.append(check_eq("additivity delta=(1,2) lam=2", joint, per_coord, 0.0))

    rng = np.random.default_rng(seed)
    for i in range(20):
        lam = float(rng.choice([0.5, 2.0, 3.0, 4.0]))
        var = float(rng.uniform(0.5, 2.0))
        means = rng.normal(size=2)
        w1 = float(rng.uniform(0.0, 1.0))
        mix = Density1D.two_component(means[0], means[1], var, w1)
        q_mean = float(rng.normal())
        lhs = renyi_quadrature(lam, mix, Density1D.gaussian(q_mean, var), spec)
        rhs = max(gaussian_renyi_closed_form(lam, m, q_mean, var) for m in means)
        checks.append(check_le(f"quasi-convexity case {i}", lhs, rhs, 1e-8))

    mix = Density1D.two_component(0.3, 2.0, 1.0, 0.0)
    lhs = renyi_quadrature(2.0, mix, Density1D.gaussian(0.0, 1.0), spec)
    checks.append(check_eq("quasi-convexity degenerate mixture", lhs, gaussian_renyi_closed_form(2.0, 0.3, 0.0, 1.0), 1e-8))
    return checks
