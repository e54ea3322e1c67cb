"""Training presets and the strategy-comparison experiment.

An experiment trains every (strategy, seed) pair on one dataset, attacks
each model, and aggregates attack accuracy, test accuracy and the
train-test accuracy gap per strategy.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import io
import json
import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .attacks import build_membership_set, shadow_attack, threshold_attack
from .data import load_preset
from .numerics import RngStream
from .sgld import TrainingConfig, train

log = logging.getLogger(__name__)

STRATEGIES = ("sgd", "dropout", "sgld")
ATTACKS = ("threshold", "shadow")
DATASETS = ("german-credit", "uci-adult", "synthetic")

# Shared hyper-parameters per dataset. Strategies differ only in the noise
# (sgld), dropout layers (dropout) and the prior, which only SGLD uses.
PRESETS: dict[str, dict] = {
    "german-credit": dict(epochs=30, batch_size=32, alpha=0.5, halve_every=5, clip_bound=10.0, hidden=(64, 32)),
    "uci-adult": dict(epochs=100, batch_size=64, alpha=0.1, halve_every=20, clip_bound=1.0, hidden=(32, 16)),
    "synthetic": dict(epochs=30, batch_size=20, alpha=0.5, halve_every=10, clip_bound=10.0, hidden=(32,)),
}
SGLD_PRIOR = {"german-credit": None, "uci-adult": 1.0, "synthetic": None}


def strategy_config(dataset: str, strategy: str, seed: int, **overrides) -> TrainingConfig:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    params = dict(PRESETS[dataset])
    params.update(seed=seed, algorithm="sgld" if strategy == "sgld" else "sgd", dropout=strategy == "dropout")
    if strategy == "sgld":
        params["prior_variance"] = SGLD_PRIOR[dataset]
    params.update(overrides)
    return TrainingConfig(**params)


@dataclasses.dataclass(frozen=True)
class ExperimentSpec:
    dataset: str
    strategies: tuple[str, ...] = STRATEGIES
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    attacks: tuple[str, ...] = ("threshold",)
    output_dir: str | None = None
    k_shadow: int = 8
    overrides: dict = dataclasses.field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(self.strategies))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "attacks", tuple(self.attacks))
        if self.dataset not in DATASETS:
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if not self.strategies or not self.seeds:
            raise ValueError("need at least one strategy and one seed")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ValueError(f"unknown strategy {s!r}")
        for a in self.attacks:
            if a not in ATTACKS:
                raise ValueError(f"unknown attack {a!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        return cls(**d)


def run_one(dataset: str, strategy: str, seed: int, attacks: Sequence[str], k_shadow: int, overrides: dict) -> dict:
    """Train one model and attack it; returns a flat result row."""
    splits = load_preset(dataset, seed=seed)
    config = strategy_config(dataset, strategy, seed, **overrides)
    rng = RngStream(seed, stream_id=STRATEGIES.index(strategy))
    result = train(config, splits["train"], rng.child(0))
    w, spec, loss = result.params.vector, result.params.spec, config.loss_spec()
    tr = nn.evaluate(w, spec, splits["train"].features, splits["train"].labels, loss)
    te = nn.evaluate(w, spec, splits["test"].features, splits["test"].labels, loss)
    row = {
        "dataset": dataset,
        "strategy": strategy,
        "seed": seed,
        "train_accuracy": tr.accuracy,
        "test_accuracy": te.accuracy,
        "gap": tr.accuracy - te.accuracy,
        "train_loss": tr.mean_loss,
        "test_loss": te.mean_loss,
        "steps": result.steps,
    }
    if result.ledger is not None:
        row["renyi_total_order2"] = result.ledger.totals.get(2.0)
    size = min(len(splits["train"]), len(splits["test"]))
    if "threshold" in attacks:
        examples = build_membership_set(w, spec, splits["train"], splits["test"], size, rng.child(1), loss)
        row["attack_threshold"] = threshold_attack(examples).attack_accuracy
    if "shadow" in attacks:
        report = shadow_attack(config, splits["holdout"], w, spec, splits["train"], splits["test"], k_shadow, rng.child(2), size)
        row["attack_shadow"] = report.attack_accuracy
    return row


def _run_safe(args) -> dict:
    dataset, strategy, seed = args[:3]
    try:
        return run_one(*args)
    except Exception as exc:  # noqa: BLE001 - reported as a failure marker in the table
        log.exception("run %s/%s/%d failed", dataset, strategy, seed)
        return {"dataset": dataset, "strategy": strategy, "seed": seed, "error": f"{type(exc).__name__}: {exc}"}


def aggregate(rows: list[dict], spec: ExperimentSpec) -> list[dict]:
    table = []
    metrics = [f"attack_{a}" for a in spec.attacks] + ["test_accuracy", "gap"]
    for strategy in spec.strategies:
        runs = [r for r in rows if r["strategy"] == strategy]
        ok = [r for r in runs if "error" not in r]
        entry = {"strategy": strategy, "runs": len(ok), "failed": len(runs) - len(ok)}
        for m in metrics:
            entry[m] = float(np.mean([r[m] for r in ok])) if ok else None
        table.append(entry)
    return table


@dataclasses.dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list[dict]
    table: list[dict]

    @property
    def failed(self) -> bool:
        return any("error" in r for r in self.rows)

    def table_csv(self) -> str:
        buf = io.StringIO()
        cols = ["strategy", "runs", "failed"] + [k for k in self.table[0] if k not in ("strategy", "runs", "failed")]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for entry in self.table:
            writer.writerow([_fmt(entry[c]) for c in cols])
        return buf.getvalue()

    def runs_csv(self) -> str:
        cols = sorted({k for r in self.rows for k in r})
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", restval="")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({k: _fmt(v) for k, v in r.items()})
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {"spec": dataclasses.asdict(self.spec), "table": self.table, "runs": self.rows}
        doc["spec"].pop("output_dir")
        doc["spec"].pop("workers")
        return json.dumps(doc, indent=2, sort_keys=True)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "table.csv").write_text(self.table_csv())
        (out / "runs.csv").write_text(self.runs_csv())
        (out / "results.json").write_text(self.to_json() + "\n")


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if v is None:
        return "FAILED"
    return v


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    jobs = [
        (spec.dataset, strategy, seed, spec.attacks, spec.k_shadow, spec.overrides)
        for strategy in spec.strategies
        for seed in spec.seeds
    ]
    if spec.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(spec.workers) as pool:
            rows = list(pool.map(_run_safe, jobs))
    else:
        rows = [_run_safe(job) for job in jobs]
    rows.sort(key=lambda r: (spec.strategies.index(r["strategy"]), r["seed"]))
    result = ExperimentResult(spec, rows, aggregate(rows, spec))
    if spec.output_dir:
        result.write(spec.output_dir)
    return result
