"""``sgld-lab`` command-line entry point.

Exit codes: 0 success, 2 usage error, 3 runtime failure, 4 failed
verification or self-check.

Training config files are JSON objects with the keys

* ``dataset``: one of ``german-credit``, ``uci-adult``, ``synthetic``;
* ``strategy``: ``sgd``, ``dropout`` or ``sgld`` (selects the preset);
* ``split_seed``: seed of the train/holdout/test permutation;
* ``training``: :class:`~sgld_lab.sgld.TrainingConfig` fields overriding the preset.

Command-line flags override file values.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bounds, nn
from .accountant import MAX_FULL_ORDER, RenyiLedger, StepRecord
from .attacks import build_membership_set, shadow_attack, threshold_attack
from .data import load_preset
from .experiment import ATTACKS, DATASETS, STRATEGIES, ExperimentSpec, run_experiment, strategy_config
from .numerics import RngStream
from .sgld import DivergentTrainingError, ModelParams, TrainingConfig, train
from .verify import SUITES, run_suite

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3
EXIT_VERIFY = 4

log = logging.getLogger("sgld_lab")


class UsageError(Exception):
    pass


class VerificationFailed(Exception):
    pass


def _emit(text: str, output: str | None) -> None:
    if output:
        Path(output).parent.mkdir(parents=True, exist_ok=True)
        Path(output).write_text(text + "\n")
    print(text)


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _schedule(alpha: list[float] | None, steps: int | None, halve_every: int | None = None, steps_per_epoch: int = 1) -> list[float]:
    """Expand ``--alpha``/``--steps`` into one step size per iteration."""
    if alpha is None:
        raise UsageError("--alpha is required")
    if steps is not None and steps < 0:
        raise UsageError("--steps must be nonnegative")
    if len(alpha) == 1:
        if steps is None:
            raise UsageError("--steps is required with a single --alpha value")
        a = alpha[0]
        if halve_every:
            return [a * 0.5 ** ((t // steps_per_epoch) // halve_every) for t in range(steps)]
        return [a] * steps
    if steps is not None and steps != len(alpha):
        raise UsageError(f"--steps {steps} does not match the {len(alpha)} listed step sizes")
    return list(alpha)


# -- account ------------------------------------------------------------------


def cmd_account(args) -> int:
    orders = args.orders or [2.0]
    if args.full_formula:
        bad = [lam for lam in orders if not (float(lam).is_integer() and 2 <= lam <= MAX_FULL_ORDER)]
        if bad:
            raise UsageError(
                f"--full-formula evaluates the binomial sum, which needs integer orders in [2, {MAX_FULL_ORDER}]; got {bad}"
            )
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    if not 1 <= args.batch_size <= args.n:
        raise UsageError("--batch-size must lie in [1, n]")
    if not args.clip > 0:
        raise UsageError("--clip must be positive")
    alphas = _schedule(args.alpha, args.steps, args.halve_every, args.steps_per_epoch)
    if any(a < 0 for a in alphas):
        raise UsageError("step sizes must be nonnegative")
    try:
        ledger = RenyiLedger(args.n, orders, full_formula=args.full_formula)
    except ValueError as exc:
        raise UsageError(str(exc))
    tau = args.batch_size / args.n
    for t, a in enumerate(alphas):
        ledger.append(StepRecord.from_schedule(t, a, tau, args.n, args.clip))
    doc = {
        "dataset_size": args.n,
        "steps": len(alphas),
        "tau": tau,
        "clip_bound": args.clip,
        "full_formula": args.full_formula,
        "totals": {repr(lam): v for lam, v in ledger.totals.items()},
        "validity": {
            repr(lam): {"all_valid": ledger.all_valid(lam), "invalid_steps": sum(not row[i] for row in ledger.validity)}
            for i, lam in enumerate(ledger.order_grid)
        },
    }
    if args.with_steps:
        doc["ledger"] = ledger.to_dict()
    _emit(json.dumps(doc, indent=2), args.output)
    return EXIT_OK


# -- bound --------------------------------------------------------------------


def cmd_bound(args) -> int:
    if args.route == "stability" and args.loss_bound is None:
        raise UsageError("the stability route needs --loss-bound (C)")
    if args.route == "info" and args.sigma is None:
        raise UsageError("the information route needs --sigma")
    if args.ledger:
        doc = json.loads(Path(args.ledger).read_text())
        alphas = [s["alpha"] for s in doc["steps"]]
        n = args.n or doc["dataset_size"]
        clips = {s["clip_bound"] for s in doc["steps"]}
        clip = args.clip or (clips.pop() if len(clips) == 1 else None)
        if clip is None:
            raise UsageError("--clip is required when the ledger mixes clip bounds")
    else:
        if args.alpha_sum is not None:
            alphas = [args.alpha_sum]
        else:
            alphas = _schedule(args.alpha, args.steps)
        n, clip = args.n, args.clip
    if n is None or clip is None:
        raise UsageError("--n and --clip are required")
    try:
        inputs = bounds.BoundInputs(clip, args.loss_bound, args.sigma, n, tuple(alphas))
    except ValueError as exc:
        raise UsageError(str(exc))
    train_m = test_m = None
    if args.metrics:
        summary = json.loads(Path(args.metrics).read_text())
        train_m, test_m = summary["train"], summary["test"]
    try:
        report = bounds.bound_report(inputs, train_m, test_m)
    except bounds.RouteMismatchError as exc:
        raise VerificationFailed(str(exc))
    doc = {"route": args.route, "bound": report.stability_bound if args.route == "stability" else report.info_bound}
    doc["report"] = report.to_dict()
    _emit(json.dumps(doc, indent=2, sort_keys=True), args.output)
    return EXIT_OK


# -- train --------------------------------------------------------------------


def _parse_set(pairs) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def resolve_train_config(args) -> tuple[str, str, int, TrainingConfig]:
    file_doc = json.loads(Path(args.config).read_text()) if args.config else {}
    unknown = set(file_doc) - {"dataset", "strategy", "split_seed", "training"}
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    dataset = args.dataset or file_doc.get("dataset", "german-credit")
    strategy = args.strategy or file_doc.get("strategy", "sgld")
    if dataset not in DATASETS:
        raise UsageError(f"unknown dataset {dataset!r}")
    if strategy not in STRATEGIES:
        raise UsageError(f"unknown strategy {strategy!r}")
    overrides = dict(file_doc.get("training", {}))
    for flag, key in (("epochs", "epochs"), ("alpha", "alpha"), ("clip", "clip_bound"), ("seed", "seed")):
        if getattr(args, flag) is not None:
            overrides[key] = getattr(args, flag)
    overrides.update(_parse_set(args.set))
    seed = overrides.pop("seed", 0)
    split_seed = args.split_seed if args.split_seed is not None else file_doc.get("split_seed", seed)
    try:
        config = strategy_config(dataset, strategy, seed, **overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training config: {exc}")
    return dataset, strategy, int(split_seed), config


def cmd_train(args) -> int:
    dataset, strategy, split_seed, config = resolve_train_config(args)
    splits = load_preset(dataset, seed=split_seed)
    rng = RngStream(config.seed, stream_id=STRATEGIES.index(strategy)).child(0)
    try:
        result = train(config, splits["train"], rng, validation=splits["holdout"])
    except DivergentTrainingError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint = result.params.to_checkpoint(config)
    checkpoint.update(dataset=dataset, strategy=strategy, split_seed=split_seed)
    (out / "checkpoint.json").write_text(json.dumps(checkpoint) + "\n")
    (out / "metrics.csv").write_text(result.history_csv())
    w, spec, loss = result.params.vector, result.params.spec, config.loss_spec()
    summary = {
        "dataset": dataset,
        "strategy": strategy,
        "steps": result.steps,
        "max_observed_loss": result.max_observed_loss,
        "train": nn.evaluate(w, spec, splits["train"].features, splits["train"].labels, loss).as_dict(),
        "test": nn.evaluate(w, spec, splits["test"].features, splits["test"].labels, loss).as_dict(),
    }
    if result.ledger is not None:
        (out / "ledger.json").write_text(result.ledger.to_json() + "\n")
        summary["renyi_totals"] = {repr(k): v for k, v in result.ledger.totals.items()}
        summary["ledger_valid"] = result.ledger.all_valid()
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


# -- attack -------------------------------------------------------------------


def cmd_attack(args) -> int:
    path = Path(args.checkpoint)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    doc = json.loads(path.read_text())
    params = ModelParams.from_checkpoint(doc)
    config = TrainingConfig.from_dict(doc["config"])
    dataset = args.dataset or doc.get("dataset")
    if dataset is None:
        raise UsageError("checkpoint does not name its dataset; pass --dataset")
    split_seed = args.split_seed if args.split_seed is not None else doc.get("split_seed", config.seed)
    splits = load_preset(dataset, seed=split_seed)
    members, nonmembers = splits["train"], splits["test"]
    size = args.size or min(len(members), len(nonmembers))
    rng = RngStream(args.seed, stream_id=0xA77)
    loss = config.loss_spec()
    if args.kind == "threshold":
        examples = build_membership_set(params.vector, params.spec, members, nonmembers, size, rng.child(1), loss)
        report = threshold_attack(examples)
    else:
        report = shadow_attack(config, splits["holdout"], params.vector, params.spec, members, nonmembers, args.k_shadow, rng.child(2), size)
    _emit(report.to_json(), args.output)
    return EXIT_OK


# -- verify -------------------------------------------------------------------


def cmd_verify(args) -> int:
    results = run_suite(args.suite)
    failed = 0
    for name, checks in results.items():
        bad = [c for c in checks if not c.passed]
        failed += len(bad)
        shown = checks if args.all_checks else bad
        for c in shown:
            print(json.dumps(c.to_dict()))
        print(json.dumps({"suite": name, "checks": len(checks), "failed": len(bad), "pass": not bad}))
    return EXIT_OK if failed == 0 else EXIT_VERIFY


# -- experiment ---------------------------------------------------------------


def cmd_experiment(args) -> int:
    doc = json.loads(Path(args.spec).read_text()) if args.spec else {}
    for key in ("dataset", "strategies", "seeds", "attacks", "k_shadow", "workers"):
        value = getattr(args, key)
        if value is not None:
            doc[key] = value
    if args.out is not None:
        doc["output_dir"] = args.out
    overrides = dict(doc.get("overrides", {}))
    overrides.update(_parse_set(args.set))
    doc["overrides"] = overrides
    if "dataset" not in doc:
        raise UsageError("--dataset is required")
    try:
        spec = ExperimentSpec.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc))
    result = run_experiment(spec)
    sys.stdout.write(result.table_csv())
    return EXIT_RUNTIME if result.failed else EXIT_OK


# -- parser -------------------------------------------------------------------


def _comma(kind):
    def parse(text: str):
        return tuple(kind(v) for v in text.split(",") if v.strip())

    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgld-lab", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("account", help="compose per-step Renyi bounds into ledger totals")
    p.add_argument("--lambda", dest="orders", type=float, action="append", help="Renyi order (repeatable)")
    p.add_argument("--alpha", type=_float_list, help="step size, or a comma-separated schedule")
    p.add_argument("--steps", type=int, help="number of iterations T")
    p.add_argument("--halve-every", type=int, help="halve alpha every this many epochs")
    p.add_argument("--steps-per-epoch", type=int, default=1)
    p.add_argument("--n", type=int, required=True, help="dataset size")
    p.add_argument("--batch-size", type=int, default=1, help="expected batch size b (tau = b/n)")
    p.add_argument("--clip", type=float, default=1.0, help="gradient clip bound L")
    p.add_argument("--full-formula", action="store_true", help="use the binomial sum at integer orders")
    p.add_argument("--with-steps", action="store_true", help="include every step record")
    p.add_argument("--output")
    p.set_defaults(func=cmd_account)

    p = sub.add_parser("bound", help="generalization bound report")
    p.add_argument("--route", choices=("stability", "info"), required=True)
    p.add_argument("--clip", type=float)
    p.add_argument("--loss-bound", type=float, help="loss bound C (stability route)")
    p.add_argument("--sigma", type=float, help="subgaussian parameter (information route)")
    p.add_argument("--n", type=int)
    p.add_argument("--alpha", type=_float_list)
    p.add_argument("--steps", type=int)
    p.add_argument("--alpha-sum", type=float, help="sum of step sizes, instead of a schedule")
    p.add_argument("--ledger", help="take n, L and the schedule from a ledger JSON")
    p.add_argument("--metrics", help="summary.json from train, for the empirical gap")
    p.add_argument("--output")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("train", help="train one model and write checkpoint, metrics and ledger")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--dataset", choices=DATASETS)
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--seed", type=int)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a training config field")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="membership inference against a checkpoint")
    p.add_argument("--kind", choices=ATTACKS, default="threshold")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", choices=DATASETS)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, help="members (and nonmembers) in the evaluation set")
    p.add_argument("--k-shadow", type=int, default=8)
    p.add_argument("--output")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("suite", choices=(*SUITES, "all"))
    p.add_argument("--all-checks", action="store_true", help="print passing checks too")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("experiment", help="compare strategies over seeds")
    p.add_argument("--spec", help="JSON experiment spec")
    p.add_argument("--dataset", choices=DATASETS)
    p.add_argument("--strategies", type=_comma(str))
    p.add_argument("--seeds", type=_comma(int))
    p.add_argument("--attacks", type=_comma(str))
    p.add_argument("--k-shadow", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sgld-lab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VerificationFailed as exc:
        print(f"sgld-lab {args.command}: self-check failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (OSError, ValueError, ArithmeticError, KeyError, json.JSONDecodeError) as exc:
        print(f"sgld-lab {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
