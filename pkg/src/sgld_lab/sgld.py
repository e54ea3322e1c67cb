"""SGLD and SGD training with Poisson subsampling and per-example clipping.

One step:

1. draw a Poisson batch (each example independently with probability ``tau``);
2. compute per-example gradients and clip each to norm ``clip_bound``;
3. sum them with the fixed weight ``1 / (tau n)``;
4. move against the gradient (plus ``w / prior_variance`` when a prior is
   set) and, for SGLD, add ``N(0, 2 alpha)`` noise to every coordinate.

SGLD runs append a :class:`~sgld_lab.accountant.StepRecord` per step. The
prior term is not recorded: it is the same under both adjacent datasets.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from typing import Sequence

import numpy as np

from . import nn
from .accountant import DEFAULT_ORDERS, RenyiLedger, StepRecord
from .data import TabularDataset
from .numerics import RngStream

ALGORITHMS = ("sgd", "sgld")

# child stream ids, one per consumer inside a training run
_INIT, _BATCH, _NOISE, _DROPOUT = 1, 2, 3, 4


class DivergentTrainingError(FloatingPointError):
    pass


@dataclasses.dataclass(frozen=True)
class TrainingConfig:
    algorithm: str = "sgd"
    dropout: bool = False
    dropout_rate: float = 0.5
    epochs: int = 30
    batch_size: int = 32
    sampling_ratio: float | None = None
    alpha: float = 1e-3
    halve_every: int | None = 5
    clip_bound: float = 1.0
    prior_variance: float | None = None
    loss_bound: float | None = None
    seed: int = 0
    hidden: tuple[int, ...] = (64, 32)
    full_formula: bool = False
    orders: tuple[float, ...] = DEFAULT_ORDERS

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "orders", tuple(float(o) for o in self.orders))
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not self.clip_bound > 0:
            raise ValueError("clip_bound must be positive")
        if self.prior_variance is not None and not self.prior_variance > 0:
            raise ValueError("prior_variance must be positive")
        if self.sampling_ratio is not None and not 0 < self.sampling_ratio <= 1:
            raise ValueError("sampling_ratio must lie in (0, 1]")
        if not self.alpha >= 0:
            raise ValueError("alpha must be nonnegative")

    def tau(self, n: int) -> float:
        return self.sampling_ratio if self.sampling_ratio is not None else min(1.0, self.batch_size / n)

    def steps_per_epoch(self, n: int) -> int:
        return math.ceil(1.0 / self.tau(n) - 1e-12)

    def alpha_at(self, epoch: int) -> float:
        """Piecewise-constant step size, halved every ``halve_every`` epochs."""
        if not self.halve_every:
            return self.alpha
        return self.alpha * 0.5 ** (epoch // self.halve_every)

    def mlp_spec(self, n_features: int, n_classes: int) -> nn.MlpSpec:
        return nn.MlpSpec((n_features, *self.hidden, n_classes), self.dropout_rate if self.dropout else 0.0)

    def loss_spec(self) -> nn.LossSpec:
        return nn.LossSpec(self.loss_bound)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        d["orders"] = list(self.orders)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - fields
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclasses.dataclass
class ModelParams:
    vector: np.ndarray
    spec: nn.MlpSpec

    def __post_init__(self):
        if self.vector.shape != (self.spec.n_params,):
            raise ValueError("parameter vector length does not match the architecture")
        if not np.all(np.isfinite(self.vector)):
            raise DivergentTrainingError("non-finite parameters")

    def to_checkpoint(self, config: TrainingConfig) -> dict:
        return {
            "architecture": list(self.spec.widths),
            "dropout_rate": self.spec.dropout_rate,
            "parameters": self.vector.tolist(),
            "config_digest": config.digest(),
            "seed": config.seed,
            "config": config.to_dict(),
        }

    @classmethod
    def from_checkpoint(cls, doc: dict) -> "ModelParams":
        spec = nn.MlpSpec(tuple(doc["architecture"]), doc.get("dropout_rate", 0.0))
        return cls(np.asarray(doc["parameters"], dtype=np.float64), spec)


def poisson_subsample(n: int, tau: float, rng: RngStream) -> np.ndarray:
    """Indices of ``range(n)``, each kept independently with probability ``tau``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if n < 0:
        raise ValueError("n must be nonnegative")
    return np.flatnonzero(rng.uniform(n) < tau)


def clip_per_example_gradient(gradient: np.ndarray, clip_bound: float) -> np.ndarray:
    """Scale ``gradient`` (one row per example, or a single vector) into the ``clip_bound`` ball."""
    if not clip_bound > 0:
        raise ValueError("clip_bound must be positive")
    g = np.asarray(gradient, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise DivergentTrainingError("divergent gradient")
    norms = np.linalg.norm(g, axis=-1, keepdims=True)
    scale = np.minimum(1.0, clip_bound / np.where(norms > 0, norms, 1.0))
    return g * scale


def sgd_step(w: np.ndarray, mean_clipped_gradient: np.ndarray, alpha: float, prior_variance: float | None = None) -> np.ndarray:
    grad = mean_clipped_gradient
    if prior_variance is not None:
        grad = grad + w / prior_variance
    return w - alpha * grad


def sgld_step(
    w: np.ndarray,
    mean_clipped_gradient: np.ndarray,
    alpha: float,
    prior_variance: float | None,
    rng: RngStream | None,
) -> np.ndarray:
    """SGD step plus ``N(0, 2 alpha I)`` noise; ``rng=None`` forces the noise to zero."""
    w_next = sgd_step(w, mean_clipped_gradient, alpha, prior_variance)
    if rng is None or alpha == 0:
        return w_next
    return w_next + rng.normal(w.shape, scale=math.sqrt(2.0 * alpha))


@dataclasses.dataclass
class TrainResult:
    params: ModelParams
    ledger: RenyiLedger | None
    history: list[dict]
    max_observed_loss: float
    steps: int

    def history_csv(self) -> str:
        lines = ["epoch,split,loss,accuracy,alpha"]
        for row in self.history:
            lines.append(f"{row['epoch']},{row['split']},{row['loss']!r},{row['accuracy']!r},{row['alpha']!r}")
        return "\n".join(lines) + "\n"


def train(
    config: TrainingConfig,
    train_set: TabularDataset,
    rng: RngStream,
    validation: TabularDataset | None = None,
    zero_noise: bool = False,
) -> TrainResult:
    """Run ``config.epochs`` epochs of ``ceil(1/tau)`` Poisson-subsampled steps.

    ``zero_noise`` is a test hook that sets the SGLD noise to zero while
    keeping every other random draw identical.

    Raises:
        DivergentTrainingError: a loss or gradient became non-finite; the
            message carries the step index.
    """
    n = len(train_set)
    if n == 0:
        raise ValueError("empty training set")
    spec = config.mlp_spec(train_set.n_features, train_set.n_classes)
    loss_spec = config.loss_spec()
    w = nn.init(spec, rng.child(_INIT))
    batch_rng, noise_rng, dropout_rng = rng.child(_BATCH), rng.child(_NOISE), rng.child(_DROPOUT)
    tau = config.tau(n)
    weight = 1.0 / (tau * n)
    per_epoch = config.steps_per_epoch(n)
    sgld = config.algorithm == "sgld"
    ledger = RenyiLedger(n, config.orders, config.full_formula) if sgld else None
    history: list[dict] = []
    max_loss = 0.0
    step = 0
    x, y = train_set.features, train_set.labels

    for epoch in range(config.epochs):
        alpha = config.alpha_at(epoch)
        for _ in range(per_epoch):
            batch = poisson_subsample(n, tau, batch_rng)
            if batch.size:
                mask = nn.dropout_mask(spec, dropout_rng, batch.size) if spec.dropout_rate > 0 else None
                try:
                    losses, grads = nn.loss_and_per_example_gradients(w, spec, x[batch], y[batch], loss_spec, mask)
                except FloatingPointError as exc:
                    raise DivergentTrainingError(f"step {step}: {exc}") from exc
                if not np.all(np.isfinite(losses)):
                    raise DivergentTrainingError(f"step {step}: non-finite loss")
                max_loss = max(max_loss, float(losses.max()))
                try:
                    clipped = clip_per_example_gradient(grads, config.clip_bound)
                except DivergentTrainingError as exc:
                    raise DivergentTrainingError(f"step {step}: {exc}") from exc
                assert np.all(np.linalg.norm(clipped, axis=1) <= config.clip_bound * (1 + 1e-12))
                grad = weight * clipped.sum(axis=0)
            else:
                # empty batch: no gradient, but the noise is still injected
                grad = np.zeros_like(w)
            if sgld:
                w = sgld_step(w, grad, alpha, config.prior_variance, None if zero_noise else noise_rng)
                ledger.append(StepRecord.from_schedule(step, alpha, tau, n, config.clip_bound))
            else:
                w = sgd_step(w, grad, alpha, config.prior_variance)
            if not np.all(np.isfinite(w)):
                raise DivergentTrainingError(f"step {step}: non-finite parameters")
            step += 1
        splits = [("train", train_set)] + ([("validation", validation)] if validation is not None and len(validation) else [])
        for name, ds in splits:
            m = nn.evaluate(w, spec, ds.features, ds.labels, loss_spec)
            history.append({"epoch": epoch, "split": name, "loss": m.mean_loss, "accuracy": m.accuracy, "alpha": alpha})
    return TrainResult(ModelParams(w, spec), ledger, history, max_loss, step)


def realized_alphas(config: TrainingConfig, n: int) -> list[float]:
    """The per-step step sizes a run of ``config`` on ``n`` examples uses."""
    per_epoch = config.steps_per_epoch(n)
    return [config.alpha_at(e) for e in range(config.epochs) for _ in range(per_epoch)]
