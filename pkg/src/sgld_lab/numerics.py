"""Scalar kernels shared by the accountant and the divergence oracle.

Everything here runs in double precision. Randomness for the whole package
flows through :class:`RngStream` so that a ``(seed, stream_id)`` pair fully
determines every draw.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Sequence

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


class QuadratureError(RuntimeError):
    """Raised when adaptive quadrature exhausts its subdivision budget."""

    def __init__(self, message: str, value: float, error_estimate: float):
        super().__init__(f"{message} (best estimate {value!r} +/- {error_estimate!r})")
        self.value = value
        self.error_estimate = error_estimate


class RngStream:
    """A seeded random stream identified by ``(seed, stream_id)``.

    Streams are single-owner. Consumers that need their own randomness call
    :meth:`child` with a distinct id rather than sharing a stream. Gaussian
    draws use numpy's ``Generator.standard_normal`` on a PCG64 bit generator;
    the method is fixed for the whole package so identical seeds give
    identical noise everywhere.
    """

    def __init__(self, seed: int, stream_id: int = 0, _path: tuple[int, ...] = ()):
        if not (0 <= seed < 2**64 and 0 <= stream_id < 2**64):
            raise ValueError("seed and stream_id must be 64-bit unsigned integers")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._path = tuple(_path)
        seq = np.random.SeedSequence(self.seed, spawn_key=self._path + (self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def child(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id, self._path + (self.stream_id,))

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return scale * self.generator.standard_normal(size)

    def uniform(self, size=None) -> np.ndarray:
        return self.generator.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, n: int, size: int) -> np.ndarray:
        """Sample ``size`` distinct indices from ``range(n)``."""
        return self.generator.choice(n, size=size, replace=False)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, path={self._path})"


@dataclasses.dataclass(frozen=True)
class QuadratureSpec:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    max_subdivisions: int = 2**16

    def __post_init__(self):
        if not self.rel_tol > 0 or not self.abs_tol > 0:
            raise ValueError("tolerances must be positive")
        if self.max_subdivisions < 4:
            raise ValueError("max_subdivisions must be at least 4")


def log_sum_exp(values: Sequence[float]) -> float:
    """Return ``log(sum(exp(values)))`` without overflow."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("empty sequence")
    m = v.max()
    if m == -np.inf:
        return -math.inf
    if m == np.inf:
        return math.inf
    return float(m + math.log(np.exp(v - m).sum()))


def log_sum_exp_axis(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Vectorised log-sum-exp along ``axis``; rows of all ``-inf`` give ``-inf``."""
    v = np.asarray(values, dtype=np.float64)
    m = v.max(axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(v - safe).sum(axis=axis, keepdims=True)) + safe
    return np.squeeze(out, axis=axis)


def log_expm1(x: float) -> float:
    """``log(exp(x) - 1)`` for ``x > 0`` without overflow or cancellation."""
    if not x > 0:
        raise ValueError("log_expm1 needs x > 0")
    return x + math.log(-math.expm1(-x))


def log1p_exp(x: float) -> float:
    """``log(1 + exp(x))``, accurate for large negative and large positive ``x``."""
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def log_binomial(m: int, k: int) -> float:
    if m < 0 or k < 0 or k > m:
        raise ValueError("invalid combination")
    if k == 0 or k == m:
        return 0.0
    # lgamma is symmetric in (k, m - k) only up to rounding; fix the order
    k = min(k, m - k)
    return math.lgamma(m + 1) - math.lgamma(k + 1) - math.lgamma(m - k + 1)


def gaussian_log_pdf(x, mean, variance):
    if np.any(np.asarray(variance) <= 0):
        raise ValueError("nonpositive variance")
    d = np.asarray(x, dtype=np.float64) - mean
    out = -d * d / (2.0 * variance) - 0.5 * np.log(2.0 * np.pi * np.asarray(variance, dtype=np.float64))
    return float(out) if np.ndim(out) == 0 else out


# 15-point Gauss-Kronrod nodes on [-1, 1] with the embedded 7-point Gauss rule.
_XK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XK[:-1], _XK[::-1]])
_KRONROD_W = np.concatenate([_WK[:-1], _WK[::-1]])
_GAUSS_W = np.zeros(15)
_GAUSS_W[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate([_WG[:-1], _WG[::-1]])


def _gk15(f, lo: np.ndarray, hi: np.ndarray):
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    x = mid[:, None] + half[:, None] * _NODES[None, :]
    y = np.asarray(f(x.ravel()), dtype=np.float64).reshape(x.shape)
    kron = half * (y @ _KRONROD_W)
    gauss = half * (y @ _GAUSS_W)
    return kron, np.abs(kron - gauss)


def adaptive_quadrature(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    spec: QuadratureSpec = QuadratureSpec(),
    breakpoints: Sequence[float] = (),
    initial_panels: int = 8,
) -> tuple[float, float]:
    """Integrate ``f`` over ``[a, b]`` by adaptive Gauss-Kronrod (7, 15).

    ``f`` must accept a 1-D array of abscissae. Panels are bisected at their
    midpoint while their error estimate exceeds their width-proportional
    share of the tolerance; all active panels are evaluated in one call.

    Returns:
        ``(value, error_estimate)``.

    Raises:
        QuadratureError: the subdivision budget ran out before convergence.
    """
    if not a < b:
        raise ValueError("require a < b")
    cuts = sorted({float(a), float(b), *(p for p in breakpoints if a < p < b)})
    edges = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        edges.append(np.linspace(lo, hi, initial_panels + 1))
    lo = np.concatenate([e[:-1] for e in edges])
    hi = np.concatenate([e[1:] for e in edges])

    done_val = 0.0
    done_err = 0.0
    done_vals: list[np.ndarray] = []
    width = b - a
    subdivisions = lo.size
    while True:
        val, err = _gk15(f, lo, hi)
        total = done_val + val.sum()
        total_err = done_err + err.sum()
        tol = max(spec.abs_tol, spec.rel_tol * abs(total))
        if total_err <= tol or lo.size == 0:
            done_vals.append(val)
            value = math.fsum(np.concatenate(done_vals))
            return value, float(total_err)
        # a panel is settled when it carries no more than its share of the tolerance
        settled = err <= tol * (hi - lo) / width
        done_vals.append(val[settled])
        done_val += val[settled].sum()
        done_err += err[settled].sum()
        lo, hi = lo[~settled], hi[~settled]
        subdivisions += lo.size
        if subdivisions > spec.max_subdivisions:
            raise QuadratureError("subdivision budget exhausted", float(total), float(total_err))
        mid = 0.5 * (lo + hi)
        lo, hi = np.concatenate([lo, mid]), np.concatenate([mid, hi])
