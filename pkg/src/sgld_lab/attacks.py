"""Membership inference: loss-threshold and shadow-model attacks.

Both attacks are evaluated on a balanced set (equal numbers of training
members and held-out nonmembers), so accuracy and balanced accuracy agree.
"""

from __future__ import annotations

import dataclasses
import json
from typing import Sequence

import numpy as np

from . import nn
from .data import TabularDataset
from .numerics import RngStream
from .sgld import TrainingConfig, train


@dataclasses.dataclass(frozen=True)
class MembershipExample:
    confidences: np.ndarray
    sorted_confidences: np.ndarray
    loss: float
    true_class: int
    is_member: bool


@dataclasses.dataclass
class AttackReport:
    attack_kind: str
    attack_accuracy: float
    true_positive_rate: float
    false_positive_rate: float
    n_members: int
    n_nonmembers: int
    threshold: float | None = None
    n_shadow_models: int | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def attack_accuracy(predictions: Sequence[bool], labels: Sequence[bool]) -> float:
    predictions = np.asarray(predictions, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels differ in length")
    if predictions.size == 0:
        raise ValueError("empty evaluation set")
    return float(np.mean(predictions == labels))


def _rates(pred, labels):
    pos, neg = labels.sum(), (~labels).sum()
    tpr = float((pred & labels).sum() / pos) if pos else 0.0
    fpr = float((pred & ~labels).sum() / neg) if neg else 0.0
    return tpr, fpr


def model_outputs(params: np.ndarray, spec: nn.MlpSpec, data: TabularDataset, loss: nn.LossSpec = nn.LossSpec()):
    """Softmax confidences and per-example losses in evaluation mode."""
    logits = nn.forward(params, spec, data.features)
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    return probs, nn.per_example_losses(logits, data.labels, loss)


def build_membership_set(
    params: np.ndarray,
    spec: nn.MlpSpec,
    members: TabularDataset,
    nonmembers: TabularDataset,
    size: int,
    rng: RngStream,
    loss: nn.LossSpec = nn.LossSpec(),
) -> list[MembershipExample]:
    """Sample ``size`` members and ``size`` nonmembers and record the model's outputs."""
    if members.digest == nonmembers.digest and np.intersect1d(members.row_ids, nonmembers.row_ids).size:
        raise ValueError("member and nonmember pools overlap")
    if size > len(members) or size > len(nonmembers):
        raise ValueError("requested more examples than a pool holds")
    examples = []
    for pool, flag, stream in ((members, True, 1), (nonmembers, False, 2)):
        picked = pool.take(np.sort(rng.child(stream).choice(len(pool), size)))
        probs, losses = model_outputs(params, spec, picked, loss)
        for p, l, c in zip(probs, losses, picked.labels):
            examples.append(MembershipExample(p, np.sort(p)[::-1].copy(), float(l), int(c), flag))
    return examples


def _threshold_sweep(losses: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Best accuracy over rules ``member iff loss < t`` and the first maximising ``t``."""
    distinct = np.unique(losses)
    candidates = np.concatenate([[-np.inf], 0.5 * (distinct[:-1] + distinct[1:]), [np.inf]])
    order = np.argsort(losses, kind="stable")
    sorted_losses, sorted_labels = losses[order], labels[order]
    # members predicted below t: count members/nonmembers with loss < t
    below = np.searchsorted(sorted_losses, candidates, side="left")
    members_below = np.concatenate([[0], np.cumsum(sorted_labels)])[below]
    nonmembers_below = below - members_below
    n_nonmembers = (~labels).sum()
    correct = members_below + (n_nonmembers - nonmembers_below)
    best = int(np.argmax(correct))
    return float(correct[best] / labels.size), float(candidates[best])


def threshold_attack(examples: Sequence[MembershipExample]) -> AttackReport:
    """Predict "member" when the loss is below a threshold chosen to maximise accuracy.

    Candidate thresholds are the midpoints between consecutive distinct
    losses plus the two degenerate rules (nobody / everybody is a member),
    so the reported accuracy is never below 0.5 on a balanced set.
    """
    losses = np.array([e.loss for e in examples])
    labels = np.array([e.is_member for e in examples])
    acc, t = _threshold_sweep(losses, labels)
    pred = losses < t
    tpr, fpr = _rates(pred, labels)
    return AttackReport("threshold", acc, tpr, fpr, int(labels.sum()), int((~labels).sum()), threshold=t)


def attack_features(examples: Sequence[MembershipExample]) -> np.ndarray:
    """Descending-sorted confidence vector followed by the loss."""
    return np.array([np.concatenate([e.sorted_confidences, [e.loss]]) for e in examples])


def _features_from_model(params, spec, data, loss):
    probs, losses = model_outputs(params, spec, data, loss)
    return np.hstack([-np.sort(-probs, axis=1), losses[:, None]])


def fit_logistic(features: np.ndarray, labels: np.ndarray, iterations: int = 2000, step: float = 0.5):
    """Full-batch gradient descent on a zero-hidden-layer softmax network.

    Features are standardised with their own mean and spread; the returned
    predictor applies the same transform.
    """
    mean = features.mean(axis=0)
    scale = features.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    z = (features - mean) / scale
    spec = nn.MlpSpec((z.shape[1], 2))
    w = np.zeros(spec.n_params)
    y = labels.astype(np.intp)
    for _ in range(iterations):
        _, grads = nn.loss_and_per_example_gradients(w, spec, z, y)
        w = w - step * grads.mean(axis=0)

    def predict(feats: np.ndarray) -> np.ndarray:
        logits = nn.forward(w, spec, (feats - mean) / scale)
        return np.argmax(logits, axis=1) == 1

    return predict


def shadow_attack(
    config: TrainingConfig,
    holdout: TabularDataset,
    target_params: np.ndarray,
    target_spec: nn.MlpSpec,
    members: TabularDataset,
    nonmembers: TabularDataset,
    k_shadow: int,
    rng: RngStream,
    eval_size: int | None = None,
) -> AttackReport:
    """Shadow-model membership attack.

    Each of ``k_shadow`` shadow models is trained with ``config`` on a random
    half of ``holdout``; its training half provides member-labelled features
    and the other half nonmember-labelled ones. A logistic predictor fitted
    on the pooled features is then scored on a balanced set drawn from the
    target's ``members`` and ``nonmembers``.
    """
    if k_shadow < 1:
        raise ValueError("need at least one shadow model")
    if len(holdout) < 4:
        raise ValueError("holdout split too small for shadow training")
    loss = config.loss_spec()
    feats, labels = [], []
    for k in range(k_shadow):
        shadow_rng = rng.child(100 + k)
        perm = shadow_rng.child(0).permutation(len(holdout))
        half = len(holdout) // 2
        inside, outside = holdout.take(perm[:half]), holdout.take(perm[half : 2 * half])
        result = train(config, inside, shadow_rng.child(1))
        for part, flag in ((inside, True), (outside, False)):
            feats.append(_features_from_model(result.params.vector, result.params.spec, part, loss))
            labels.append(np.full(len(part), flag))
    predict = fit_logistic(np.vstack(feats), np.concatenate(labels))

    size = eval_size or min(len(members), len(nonmembers))
    examples = build_membership_set(target_params, target_spec, members, nonmembers, size, rng.child(1), loss)
    truth = np.array([e.is_member for e in examples])
    pred = predict(attack_features(examples))
    tpr, fpr = _rates(pred, truth)
    return AttackReport(
        "shadow", attack_accuracy(pred, truth), tpr, fpr, int(truth.sum()), int((~truth).sum()), n_shadow_models=k_shadow
    )
