"""A small fully connected classifier with hand-written backpropagation.

Parameters live in one flat vector; :class:`MlpSpec` knows how to slice it
into per-layer weight matrices and biases. Hidden layers use the rectifier.
Gradients are computed per example (no averaging inside the network), which
is what per-example clipping needs.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Sequence

import numpy as np

from .numerics import RngStream


@dataclasses.dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...]
    dropout_rate: float = 0.0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError("need at least input and output widths, all >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def n_classes(self) -> int:
        return self.widths[-1]

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        return self.widths[1:-1]

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        return list(zip(self.widths[:-1], self.widths[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)

    def unflatten(self, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {params.shape}")
        layers, pos = [], 0
        for i, o in self.layer_shapes:
            w = params[pos : pos + i * o].reshape(i, o)
            pos += i * o
            b = params[pos : pos + o]
            pos += o
            layers.append((w, b))
        return layers


@dataclasses.dataclass(frozen=True)
class LossSpec:
    truncation_bound: float | None = None

    def __post_init__(self):
        if self.truncation_bound is not None and not self.truncation_bound > 0:
            raise ValueError("truncation bound must be positive")


def init(spec: MlpSpec, rng: RngStream) -> np.ndarray:
    """Gaussian weights with variance ``2 / (fan_in + fan_out)``; zero biases."""
    parts = []
    for i, o in spec.layer_shapes:
        parts.append(rng.normal(i * o, scale=math.sqrt(2.0 / (i + o))))
        parts.append(np.zeros(o))
    return np.concatenate(parts)


def dropout_mask(spec: MlpSpec, rng: RngStream, batch: int | None = None) -> list[np.ndarray]:
    """One keep-mask per hidden layer; each unit kept with probability ``1 - rate``.

    With ``batch`` the masks have a leading batch axis, one row per example.
    """
    masks = []
    for width in spec.hidden_widths:
        shape = (width,) if batch is None else (batch, width)
        if spec.dropout_rate == 0.0:
            masks.append(np.ones(shape))
        else:
            masks.append((rng.uniform(shape) >= spec.dropout_rate).astype(np.float64))
    return masks


def _forward(params, spec, x, dropout_mask):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != spec.widths[0]:
        raise ValueError(f"input has {x.shape[1]} features, network expects {spec.widths[0]}")
    layers = spec.unflatten(params)
    keep_scale = 1.0 / (1.0 - spec.dropout_rate)
    acts, pre = [x], []
    h = x
    for k, (w, b) in enumerate(layers):
        z = h @ w + b
        if k == len(layers) - 1:
            pre.append(z)
            break
        pre.append(z)
        h = np.maximum(z, 0.0)
        if dropout_mask is not None:
            h = h * (dropout_mask[k] * keep_scale)
        acts.append(h)
    return acts, pre


def forward(params: np.ndarray, spec: MlpSpec, x: np.ndarray, dropout_mask: Sequence[np.ndarray] | None = None) -> np.ndarray:
    """Class logits for one example (1-D ``x``) or a batch (2-D ``x``)."""
    single = np.ndim(x) == 1
    _, pre = _forward(params, spec, x, dropout_mask)
    logits = pre[-1]
    return logits[0] if single else logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def per_example_losses(logits: np.ndarray, labels: np.ndarray, loss: LossSpec = LossSpec()) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.intp)
    losses = -_log_softmax(logits)[np.arange(labels.size), labels]
    if loss.truncation_bound is not None:
        losses = np.minimum(losses, loss.truncation_bound)
    return losses


def loss_and_per_example_gradients(
    params: np.ndarray,
    spec: MlpSpec,
    x: np.ndarray,
    labels: np.ndarray,
    loss: LossSpec = LossSpec(),
    dropout_mask: Sequence[np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Softmax cross-entropy and its exact gradient for every example.

    ``dropout_mask`` entries carry a leading batch axis (see :func:`dropout_mask`).
    Where a truncated loss is clipped at its bound the gradient is zero.

    Returns:
        ``(losses, grads)`` with shapes ``(B,)`` and ``(B, n_params)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.intp)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    acts, pre = _forward(params, spec, x, dropout_mask)
    logits = pre[-1]
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite activation")
    log_p = _log_softmax(logits)
    batch = np.arange(labels.size)
    losses = -log_p[batch, labels]

    delta = np.exp(log_p)
    delta[batch, labels] -= 1.0
    if loss.truncation_bound is not None:
        cut = losses > loss.truncation_bound
        delta[cut] = 0.0
        losses = np.minimum(losses, loss.truncation_bound)

    layers = spec.unflatten(params)
    keep_scale = 1.0 / (1.0 - spec.dropout_rate)
    grads = []
    for k in range(len(layers) - 1, -1, -1):
        w, _ = layers[k]
        a_prev = acts[k]
        grads.append(delta)  # bias gradient
        grads.append(np.einsum("bi,bo->bio", a_prev, delta).reshape(labels.size, -1))
        if k == 0:
            break
        back = delta @ w.T
        if dropout_mask is not None:
            back = back * (dropout_mask[k - 1] * keep_scale)
        delta = back * (pre[k - 1] > 0)
    grads.reverse()
    return losses, np.concatenate(grads, axis=1)


@dataclasses.dataclass(frozen=True)
class Metrics:
    mean_loss: float
    accuracy: float
    max_loss: float

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def predict_proba(params: np.ndarray, spec: MlpSpec, x: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(forward(params, spec, np.atleast_2d(x))))


def evaluate(params: np.ndarray, spec: MlpSpec, x: np.ndarray, labels: np.ndarray, loss: LossSpec = LossSpec()) -> Metrics:
    """Mean loss, accuracy and worst per-example loss with dropout disabled.

    ``np.argmax`` resolves ties toward the lowest class index.
    """
    if len(labels) == 0:
        raise ValueError("empty split")
    logits = forward(params, spec, np.atleast_2d(x))
    losses = per_example_losses(logits, labels, loss)
    acc = float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))
    return Metrics(float(np.mean(losses)), acc, float(np.max(losses)))
