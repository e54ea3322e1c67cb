"""Generalization bounds derived from the Renyi ledger.

Two routes lead from the per-step divergence total to a bound on the
expected generalization gap:

* stability: squared Hellinger distance <= order-1/2 Renyi divergence, then
  ``gen <= 2 C sqrt(D_H)`` for a loss bounded by ``C``;
* information: individual-sample mutual information <= the ledger total,
  then ``gen <= mean_i sqrt(2 sigma^2 I_i)`` for a ``sigma``-subgaussian loss.

Each public bound is computed both from its closed form and along its
derivation; the two must agree to ``ROUTE_RTOL``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from typing import Sequence

from .accountant import theorem1_total

ROUTE_RTOL = 1e-12
DEFAULT_SUBGAUSSIAN = 1.0

POPULATION_NOTE = "population risk approximated by the held-out test split"
EXPECTATION_NOTE = (
    "mutual-information bound uses the worst-case ledger total; "
    "the expectation over training sets reduces to the identity because the total does not depend on S"
)
HALF_ORDER_NOTE = (
    "stability route evaluates the closed-form total at order 1/2, outside the integer-order "
    "subsampled analysis that justifies the per-step bound"
)


class RouteMismatchError(ArithmeticError):
    pass


@dataclasses.dataclass(frozen=True)
class BoundInputs:
    clip_bound: float
    loss_bound: float | None
    subgaussian_param: float | None
    dataset_size: int
    alpha_schedule: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "alpha_schedule", tuple(float(a) for a in self.alpha_schedule))
        if self.dataset_size < 1:
            raise ValueError("dataset_size must be at least 1")
        if not self.clip_bound > 0:
            raise ValueError("clip_bound must be positive")
        if self.loss_bound is not None and not self.loss_bound > 0:
            raise ValueError("loss_bound must be positive")
        if self.subgaussian_param is not None and not self.subgaussian_param >= 0:
            raise ValueError("subgaussian_param must be nonnegative")
        if any(a < 0 for a in self.alpha_schedule):
            raise ValueError("step sizes must be nonnegative")

    @property
    def alpha_sum(self) -> float:
        return math.fsum(self.alpha_schedule)


def _agree(a: float, b: float) -> bool:
    return a == b or abs(a - b) <= ROUTE_RTOL * max(abs(a), abs(b))


def hellinger_from_renyi(renyi_half: float) -> float:
    """Upper bound on the squared Hellinger distance from an order-1/2 Renyi bound."""
    if renyi_half < 0:
        raise ValueError("divergence bound must be nonnegative")
    return renyi_half


def stability_gen_bound(inputs: BoundInputs, check: bool = True) -> float:
    """``sqrt(2) L C / n * sqrt(sum alpha)``, cross-checked as ``2 C sqrt(total at order 1/2)``."""
    if inputs.loss_bound is None:
        raise ValueError("stability bound needs a loss bound C")
    direct = math.sqrt(2.0) * inputs.clip_bound * inputs.loss_bound / inputs.dataset_size * math.sqrt(inputs.alpha_sum)
    if check:
        eps_half = theorem1_total(0.5, inputs.clip_bound, inputs.dataset_size, inputs.alpha_schedule)
        via_route = 2.0 * inputs.loss_bound * math.sqrt(hellinger_from_renyi(eps_half))
        if not _agree(direct, via_route):
            raise RouteMismatchError(f"stability routes disagree: {direct!r} vs {via_route!r}")
    return direct


def mi_bound_from_renyi(ledger_total_at_lambda: float) -> float:
    """Individual-sample mutual information bound: the ledger total itself."""
    if ledger_total_at_lambda < 0:
        raise ValueError("divergence bound must be nonnegative")
    return ledger_total_at_lambda


def gen_from_individual_mi(mi_values: Sequence[float], subgaussian_param: float) -> float:
    """``mean_i sqrt(2 sigma^2 I_i)``."""
    if len(mi_values) == 0:
        raise ValueError("need at least one mutual information value")
    if any(m < 0 for m in mi_values):
        raise ValueError("mutual information values must be nonnegative")
    s2 = subgaussian_param**2
    return math.fsum(math.sqrt(2.0 * s2 * m) for m in mi_values) / len(mi_values)


def info_gen_bound(inputs: BoundInputs, check: bool = True) -> float:
    """``sqrt(2) sigma L / n * sqrt(sum alpha)``, cross-checked through the per-sample MI bound."""
    if inputs.subgaussian_param is None:
        raise ValueError("information bound needs a subgaussian parameter")
    direct = math.sqrt(2.0) * inputs.subgaussian_param * inputs.clip_bound / inputs.dataset_size * math.sqrt(inputs.alpha_sum)
    if check:
        mi = mi_bound_from_renyi(theorem1_total(1.0, inputs.clip_bound, inputs.dataset_size, inputs.alpha_schedule))
        via_route = gen_from_individual_mi([mi] * inputs.dataset_size, inputs.subgaussian_param)
        if not _agree(direct, via_route):
            raise RouteMismatchError(f"information routes disagree: {direct!r} vs {via_route!r}")
    return direct


def empirical_gap(train_metrics: dict, test_metrics: dict) -> dict:
    """Test-minus-train loss and train-minus-test accuracy."""
    return {
        "gap_loss": test_metrics["mean_loss"] - train_metrics["mean_loss"],
        "gap_accuracy": train_metrics["accuracy"] - test_metrics["accuracy"],
    }


def heuristic_subgaussian(losses: Sequence[float]) -> float:
    """Half the observed loss range (a bounded variable in [a, b] is (b-a)/2-subgaussian)."""
    if len(losses) == 0:
        raise ValueError("no losses")
    return 0.5 * (max(losses) - min(losses))


@dataclasses.dataclass
class BoundReport:
    stability_bound: float | None
    info_bound: float | None
    hellinger_bound: float
    mi_bound: float
    renyi_total_half: float
    empirical_gap_loss: float | None = None
    empirical_gap_accuracy: float | None = None
    notes: list[str] = dataclasses.field(default_factory=list)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def bound_report(
    inputs: BoundInputs,
    train_metrics: dict | None = None,
    test_metrics: dict | None = None,
    ledger_valid: bool | None = None,
    max_observed_loss: float | None = None,
    subgaussian_heuristic: bool = False,
) -> BoundReport:
    eps_half = theorem1_total(0.5, inputs.clip_bound, inputs.dataset_size, inputs.alpha_schedule)
    mi = mi_bound_from_renyi(theorem1_total(1.0, inputs.clip_bound, inputs.dataset_size, inputs.alpha_schedule))
    notes = [POPULATION_NOTE, EXPECTATION_NOTE, HALF_ORDER_NOTE]
    report = BoundReport(
        stability_bound=None if inputs.loss_bound is None else stability_gen_bound(inputs),
        info_bound=None if inputs.subgaussian_param is None else info_gen_bound(inputs),
        hellinger_bound=hellinger_from_renyi(eps_half),
        mi_bound=mi,
        renyi_total_half=eps_half,
        notes=notes,
    )
    if train_metrics is not None and test_metrics is not None:
        gap = empirical_gap(train_metrics, test_metrics)
        report.empirical_gap_loss = gap["gap_loss"]
        report.empirical_gap_accuracy = gap["gap_accuracy"]
    if ledger_valid is False:
        notes.append("per-step validity conditions failed for at least one step; the closed-form total is not certified")
    if max_observed_loss is not None and inputs.loss_bound is not None and max_observed_loss > inputs.loss_bound:
        notes.append(
            f"loss bound violated: observed per-example loss {max_observed_loss!r} exceeds C={inputs.loss_bound!r}"
        )
    if subgaussian_heuristic:
        notes.append("subgaussian parameter estimated heuristically from the observed loss range")
    return report
