"""Per-step Renyi divergence bounds for SGLD and their composition.

A training run appends one :class:`StepRecord` per iteration to a
:class:`RenyiLedger`. Each step contributes, at every order on the ledger's
grid, either the exact subsampled-Gaussian binomial sum (integer orders, when
requested) or the closed-form term ``lam * alpha * L**2 / n**2``. Totals are
plain sums over steps, kept exactly rounded so that composition is
independent of step order.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import math
from typing import Iterable, Sequence

from .numerics import log1p_exp, log_binomial, log_expm1, log_sum_exp

MIN_SIGMA_SQ = 0.53
MAX_FULL_ORDER = 256
DEFAULT_ORDERS: tuple[float, ...] = (0.5,) + tuple(float(k) for k in range(2, 65))


class ValidityError(ValueError):
    pass


def _check_order(lam: float) -> float:
    lam = float(lam)
    if not lam >= 0.5 or lam == 1.0 or not math.isfinite(lam):
        raise ValueError(f"Renyi order must be >= 0.5 and != 1, got {lam}")
    return lam


def _is_integer_order(lam: float) -> bool:
    return float(lam).is_integer() and 2 <= lam <= MAX_FULL_ORDER


def effective_sigma_sq(alpha: float, batch_weight: float, clip_bound: float) -> float:
    """Noise-to-sensitivity ratio ``2 / (alpha * batch_weight**2 * clip_bound**2)``."""
    if not (alpha > 0 and batch_weight > 0 and clip_bound > 0):
        raise ValueError("nonpositive parameter")
    denom = alpha * batch_weight**2 * clip_bound**2
    return 2.0 / denom if denom > 0 else math.inf


@dataclasses.dataclass(frozen=True)
class Condition:
    name: str
    lhs: float
    rhs: float
    holds: bool


@dataclasses.dataclass(frozen=True)
class ValidityReport:
    valid: bool
    conditions: tuple[Condition, ...]

    @property
    def failed(self) -> list[str]:
        return [c.name for c in self.conditions if not c.holds]


def validity_check(lam: float, tau: float, sigma_sq: float) -> ValidityReport:
    """Check the regime in which ``2 lam tau^2 / sigma^2`` bounds the step divergence.

    Conditions: ``sigma_sq >= 0.53`` and
    ``lam - 1 <= (2/3) sigma_sq log(1 / (lam tau (1 + sigma_sq)))``.
    With ``tau == 0`` the log term is ``+inf`` and the second condition holds.
    """
    c1 = Condition("sigma_sq >= 0.53", sigma_sq, MIN_SIGMA_SQ, sigma_sq >= MIN_SIGMA_SQ)
    if tau == 0.0:
        rhs = math.inf
    else:
        rhs = -(2.0 / 3.0) * sigma_sq * math.log(lam * tau * (1.0 + sigma_sq))
    c2 = Condition("lam - 1 <= (2/3) sigma_sq log(1/(lam tau (1+sigma_sq)))", lam - 1.0, rhs, lam - 1.0 <= rhs)
    return ValidityReport(c1.holds and c2.holds, (c1, c2))


@functools.lru_cache(maxsize=65536)
def subsampled_gaussian_renyi(lam: int, tau: float, sigma_sq: float) -> float:
    """Order-``lam`` Renyi divergence of ``(1-tau) N(0, s) + tau N(1, s)`` from ``N(0, s)``.

    Evaluates the binomial sum with ``rho(j) = j / (2 sigma_sq)`` term by term
    in log space. Only integer orders in ``[2, 256]`` are supported.
    """
    if isinstance(lam, float):
        if not lam.is_integer():
            raise ValueError("full formula requires an integer order")
        lam = int(lam)
    if not 2 <= lam <= MAX_FULL_ORDER:
        raise ValueError(f"order must be an integer in [2, {MAX_FULL_ORDER}], got {lam}")
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if not sigma_sq > 0:
        raise ValueError("sigma_sq must be positive")
    if tau == 0.0:
        return 0.0
    log_tau = math.log(tau)
    log_1m = math.log1p(-tau) if tau < 1.0 else -math.inf
    # The j = 0 and j = 1 terms, (lam tau - tau + 1)(1 - tau)^(lam - 1), carry a
    # factor exp(0). Since the binomial weights sum to one, the whole sum is
    # 1 + sum_{j>=2} C(lam, j) (1-tau)^(lam-j) tau^j (exp((j-1) rho(j)) - 1),
    # which keeps full relative precision when the divergence is tiny.
    terms = []
    for j in range(2, lam + 1):
        rho = j / (2.0 * sigma_sq)
        power = 0.0 if j == lam else (lam - j) * log_1m
        terms.append(log_binomial(lam, j) + power + j * log_tau + log_expm1((j - 1) * rho))
    return log1p_exp(log_sum_exp(terms)) / (lam - 1)


def simplified_step_bound(lam: float, tau: float, sigma_sq: float, unsafe: bool = False) -> float:
    """``2 lam tau^2 / sigma_sq``; raises unless the validity conditions hold or ``unsafe``."""
    if not unsafe and not validity_check(lam, tau, sigma_sq).valid:
        raise ValidityError("validity conditions not met")
    return 2.0 * lam * tau * tau / sigma_sq


def theorem1_step_term(lam: float, alpha: float, clip_bound: float, n: int) -> float:
    if n < 1:
        raise ValueError("dataset size must be at least 1")
    if alpha < 0 or clip_bound <= 0:
        raise ValueError("nonpositive parameter")
    return lam * alpha * clip_bound**2 / n**2


def theorem1_total(lam: float, clip_bound: float, n: int, alphas: Iterable[float]) -> float:
    """Closed-form total ``lam L^2 / n^2 * sum(alphas)`` over a step-size schedule.

    ``lam = 1`` is accepted here as the KL limit of the closed form.
    """
    if n < 1:
        raise ValueError("dataset size must be at least 1")
    return lam * clip_bound**2 / n**2 * math.fsum(alphas)


class ExactSum:
    """Running sum that is exactly rounded and therefore order independent.

    Keeps Shewchuk's non-overlapping partials, the same scheme ``math.fsum``
    uses, so the result equals ``math.fsum`` of everything added so far.
    """

    def __init__(self):
        self._partials: list[float] = []

    def add(self, x: float) -> None:
        i = 0
        for y in self._partials:
            if abs(x) < abs(y):
                x, y = y, x
            hi = x + y
            lo = y - (hi - x)
            if lo:
                self._partials[i] = lo
                i += 1
            x = hi
        self._partials[i:] = [x]

    @property
    def value(self) -> float:
        return math.fsum(self._partials)


@dataclasses.dataclass(frozen=True)
class StepRecord:
    step_index: int
    alpha: float
    tau: float
    batch_weight: float
    clip_bound: float
    sigma_sq: float
    noise_variance: float

    @classmethod
    def from_schedule(cls, step_index: int, alpha: float, tau: float, n: int, clip_bound: float) -> "StepRecord":
        """Build a record with the fixed batch weight ``1 / (tau n)``."""
        batch_weight = 1.0 / (tau * n)
        sigma_sq = effective_sigma_sq(alpha, batch_weight, clip_bound) if alpha > 0 else math.inf
        return cls(step_index, alpha, tau, batch_weight, clip_bound, sigma_sq, 2.0 * alpha)


class RenyiLedger:
    """Per-step privacy records with composed totals over an order grid."""

    def __init__(self, dataset_size: int, order_grid: Sequence[float] = DEFAULT_ORDERS, full_formula: bool = False):
        if dataset_size < 1:
            raise ValueError("dataset_size must be at least 1")
        self.dataset_size = int(dataset_size)
        self.order_grid = tuple(_check_order(lam) for lam in order_grid)
        if len(set(self.order_grid)) != len(self.order_grid):
            raise ValueError("duplicate orders in grid")
        self.full_formula = full_formula
        self.steps: list[StepRecord] = []
        self.validity: list[list[bool]] = []
        self._sums = {lam: ExactSum() for lam in self.order_grid}
        self._memo: dict[tuple, tuple[list[float], list[bool]]] = {}

    def __len__(self):
        return len(self.steps)

    @property
    def totals(self) -> dict[float, float]:
        return {lam: s.value for lam, s in self._sums.items()}

    def step_term(self, record: StepRecord, lam: float) -> float:
        if record.alpha == 0 or record.tau == 0:
            return 0.0
        if self.full_formula and _is_integer_order(lam):
            return subsampled_gaussian_renyi(int(lam), record.tau, record.sigma_sq)
        return theorem1_step_term(lam, record.alpha, record.clip_bound, self.dataset_size)

    def step_validity(self, record: StepRecord) -> list[bool]:
        if record.alpha == 0 or record.tau == 0:
            return [True] * len(self.order_grid)
        return [validity_check(lam, record.tau, record.sigma_sq).valid for lam in self.order_grid]

    def append(self, record: StepRecord) -> "RenyiLedger":
        if record.step_index != len(self.steps):
            raise ValueError(f"out-of-order step index {record.step_index}, expected {len(self.steps)}")
        # steps within an epoch share (alpha, tau, sigma_sq); evaluate once per distinct setting
        key = (record.alpha, record.tau, record.sigma_sq, record.clip_bound)
        if key not in self._memo:
            terms = [self.step_term(record, lam) for lam in self.order_grid]
            self._memo[key] = (terms, self.step_validity(record))
        terms, valid = self._memo[key]
        for lam, term in zip(self.order_grid, terms):
            self._sums[lam].add(term)
        self.steps.append(record)
        self.validity.append(valid)
        return self

    def compose(self) -> dict[float, float]:
        """Recompute totals from the step records (must equal :attr:`totals`)."""
        return {lam: math.fsum(self.step_term(r, lam) for r in self.steps) for lam in self.order_grid}

    def all_valid(self, lam: float | None = None) -> bool:
        cols = range(len(self.order_grid)) if lam is None else [self.order_grid.index(lam)]
        return all(row[c] for row in self.validity for c in cols)

    def to_dict(self) -> dict:
        return {
            "dataset_size": self.dataset_size,
            "full_formula": self.full_formula,
            "order_grid": list(self.order_grid),
            "steps": [dataclasses.asdict(s) for s in self.steps],
            "totals": {repr(lam): v for lam, v in self.totals.items()},
            "validity": {
                repr(lam): [row[i] for row in self.validity] for i, lam in enumerate(self.order_grid)
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, doc: dict) -> "RenyiLedger":
        ledger = cls(doc["dataset_size"], doc["order_grid"], doc.get("full_formula", False))
        for step in doc["steps"]:
            ledger.append(StepRecord(**step))
        return ledger


def append_step(ledger: RenyiLedger, record: StepRecord) -> RenyiLedger:
    return ledger.append(record)


def compose(ledger: RenyiLedger) -> dict[float, float]:
    return ledger.compose()
