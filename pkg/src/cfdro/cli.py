"""Command-line front end: convert, evaluate, optimize, coverage.

Every command is deterministic under a fixed seed, never mutates its
inputs, and writes its resolved configuration next to its outputs.  The
seed is taken from ``--seed`` when given, else from the ``CF_DRO_SEED``
environment variable, else 0.

Exit codes: 0 success, 1 validation error, 2 runtime or solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    LoggingPolicyConfig,
    SplitSpec,
    collect_bandit_log,
    parse_libsvm_multilabel,
    read_bandit_log,
    split_dataset,
    synthetic_multilabel_dataset,
    train_logging_policy,
    write_bandit_log,
)
from .divergences import DivergenceKind
from .dro import SolverError
from .estimators import ips_risk
from .intervals import (
    bernstein_interval,
    coverage_experiment,
    dro_interval,
    hoeffding_interval,
    write_coverage_csv,
)
from .optimize import OptimizerConfig, train_dro, train_dro_cv, train_log_trick, train_poem
from .policies import LinearPolicy, greedy_risk, load_policy, save_policy, true_risk

_BUNDLED_SYNTHETIC = "bundled:synthetic"
_DEFAULT_LAMBDA_GRID = "1e-4,4.64e-4,2.15e-3,1e-2,4.64e-2,2.15e-1,1"
_ALGO_CHOICES = ("ips", "poem", "dro-chi2", "dro-kl", "dro-burg", "dro-hellinger")


class _CliError(Exception):
    """Validation failure; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: D102 - argparse hook
        raise _CliError(message)


def _resolve_seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get("CF_DRO_SEED")
    return int(env) if env else 0


def _load_dataset(path: str):
    if path == _BUNDLED_SYNTHETIC:
        return synthetic_multilabel_dataset()
    target = Path(path)
    if not target.exists():
        raise _CliError(f"dataset file not found: {path}")
    return parse_libsvm_multilabel(target)


def _parse_divergences(names: str):
    if names.strip().lower() == "all":
        return list(DivergenceKind)
    try:
        return [DivergenceKind.from_name(token) for token in names.split(",") if token.strip()]
    except ValueError as exc:
        raise _CliError(str(exc)) from exc


def _write_config(out_dir: Path, payload: dict) -> None:
    payload = dict(payload)
    payload["artifact_version"] = f"cfdro {__version__}"
    (out_dir / "config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _prepare_out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ----------------------------------------------------------------------
# convert
# ----------------------------------------------------------------------


def cmd_convert(args) -> int:
    seed = _resolve_seed(args.seed)
    dataset = _load_dataset(args.data)
    spec = SplitSpec(
        train_frac=args.train_frac,
        validation_frac=args.validation_frac,
        test_frac=args.test_frac,
        logging_frac=args.logging_frac,
        seed=seed,
    )
    if args.replay_count < 1:
        raise _CliError("replay count must be a positive integer")
    splits = split_dataset(dataset, spec)
    policy0 = train_logging_policy(
        splits.logging,
        LoggingPolicyConfig(action_space=args.action_space, temperature=args.temperature),
    )
    log = collect_bandit_log(splits.train, policy0, args.replay_count, seed=seed + 1)
    out = _prepare_out_dir(args.output_dir)
    write_bandit_log(log, out / "bandit_log.jsonl")
    save_policy(policy0, out / "logging_policy.json")
    (out / "splits.json").write_text(json.dumps(splits.indices, sort_keys=True) + "\n")
    _write_config(
        out,
        {
            "command": "convert",
            "data": args.data,
            "replay_count": args.replay_count,
            "fractions": [args.train_frac, args.validation_frac, args.test_frac],
            "logging_frac": args.logging_frac,
            "action_space": args.action_space,
            "temperature": args.temperature,
            "seed": seed,
            "n_records": log.n,
        },
    )
    print(f"wrote {log.n} records to {out / 'bandit_log.jsonl'}")
    return 0


# ----------------------------------------------------------------------
# evaluate
# ----------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    if not 0 < args.delta < 1:
        raise _CliError("delta must lie in (0, 1)")
    log_path = Path(args.log)
    if not log_path.exists():
        raise _CliError(f"log file not found: {args.log}")
    log = read_bandit_log(log_path)
    policy = load_policy(args.policy)
    kinds = _parse_divergences(args.divergence)
    rows = []
    for kind in kinds:
        iv = dro_interval(log, policy, kind, args.delta)
        rows.append([iv.method, kind.value, args.delta, iv.n, repr(iv.lower), repr(iv.upper), repr(iv.width)])
    for fn in (hoeffding_interval, bernstein_interval):
        iv = fn(log, policy, args.delta, weight_bound=args.weight_bound)
        rows.append([iv.method, "", args.delta, iv.n, repr(iv.lower), repr(iv.upper), repr(iv.width)])
    header = ["method", "divergence", "delta", "n", "lower", "upper", "width"]
    if args.output == "-":
        writer = csv.writer(sys.stdout)
        writer.writerow(header)
        writer.writerows(rows)
    else:
        _write_csv(Path(args.output), header, rows)
        print(f"wrote {len(rows)} intervals to {args.output}")
    return 0


# ----------------------------------------------------------------------
# optimize
# ----------------------------------------------------------------------


def _run_algorithm(algo, mode, variant, train_log, val_log, policy0, delta, lambda_grid, opt_config):
    """Train one algorithm on one repetition's logs; returns the final policy."""
    if algo == "ips":
        policy, _ = train_poem(train_log, 0.0, policy0, opt_config)
        return policy
    if algo == "poem":
        best = None
        for lam in lambda_grid:
            candidate, _ = train_poem(train_log, lam, policy0, opt_config)
            score = ips_risk(val_log, candidate)
            if best is None or score < best[0]:
                best = (score, candidate)
        return best[1]
    kind = DivergenceKind.from_name(algo.split("-", 1)[1])
    if variant == "cv":
        policy, _ = train_dro_cv(train_log, kind, delta, policy0, opt_config)
    elif variant == "logtrick":
        policy, _ = train_log_trick(train_log, kind, delta, policy0, opt_config)
    else:
        policy, _ = train_dro(train_log, kind, delta, policy0, opt_config)
    return policy


def _optimize_one_rep(payload):
    """Worker for one repetition; top-level so it can cross a process boundary."""
    dataset = payload["dataset"]
    args = payload["args"]
    rep = payload["rep"]
    rep_seed = payload["rep_seed"]
    spec = SplitSpec(
        train_frac=args["train_frac"],
        validation_frac=args["validation_frac"],
        test_frac=args["test_frac"],
        logging_frac=args["logging_frac"],
        seed=rep_seed,
    )
    splits = split_dataset(dataset, spec)
    policy0 = train_logging_policy(
        splits.logging,
        LoggingPolicyConfig(action_space=args["action_space"], temperature=args["temperature"]),
    )
    train_log = collect_bandit_log(splits.train, policy0, args["replay_count"], seed=rep_seed + 1)
    val_log = collect_bandit_log(splits.validation, policy0, args["replay_count"], seed=rep_seed + 2)
    mode = args["mode"]
    opt_config = OptimizerConfig(
        mode=mode,
        max_iters=args["max_iters"],
        batch_size=args["batch_size"],
        step_size=args["step_size"],
        seed=rep_seed,
    )
    results = []
    for algo in args["algos"]:
        policy = _run_algorithm(
            algo, mode, args["variant"], train_log, val_log, policy0,
            args["delta"], args["lambda_grid"], opt_config,
        )
        results.append(
            {
                "algorithm": algo,
                "repetition": rep,
                "risk": true_risk(policy, splits.test),
                "greedy_risk": greedy_risk(policy, splits.test),
            }
        )
    return results


def cmd_optimize(args) -> int:
    seed = _resolve_seed(args.seed)
    if not 0 < args.delta < 1:
        raise _CliError("delta must lie in (0, 1)")
    if args.repetitions < 1:
        raise _CliError("repetitions must be positive")
    dataset = _load_dataset(args.data)
    algos = [token.strip() for token in args.algos.split(",") if token.strip()]
    for algo in algos:
        if algo not in _ALGO_CHOICES:
            raise _CliError(f"unknown algorithm {algo!r}; choose from {', '.join(_ALGO_CHOICES)}")
    try:
        lambda_grid = [float(tok) for tok in args.lambda_grid.split(",") if tok.strip()]
    except ValueError as exc:
        raise _CliError(f"bad lambda grid: {args.lambda_grid}") from exc
    max_iters = args.max_iters if args.max_iters else (5000 if args.mode == "stochastic" else 300)
    shared = {
        "train_frac": args.train_frac,
        "validation_frac": args.validation_frac,
        "test_frac": args.test_frac,
        "logging_frac": args.logging_frac,
        "action_space": args.action_space,
        "temperature": args.temperature,
        "replay_count": args.replay_count,
        "mode": args.mode,
        "variant": args.variant,
        "delta": args.delta,
        "lambda_grid": lambda_grid,
        "algos": algos,
        "max_iters": max_iters,
        "batch_size": args.batch_size,
        "step_size": args.step_size,
    }
    rep_seeds = [seed + 1000 * rep for rep in range(args.repetitions)]
    payloads = [
        {"dataset": dataset, "args": shared, "rep": rep, "rep_seed": rep_seeds[rep]}
        for rep in range(args.repetitions)
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            per_rep = list(pool.map(_optimize_one_rep, payloads))
    else:
        per_rep = [_optimize_one_rep(p) for p in payloads]
    detail_rows = [row for rep_rows in per_rep for row in rep_rows]
    out = _prepare_out_dir(args.output_dir)
    _write_csv(
        out / "details.csv",
        ["algorithm", "repetition", "risk", "greedy_risk"],
        [[r["algorithm"], r["repetition"], repr(r["risk"]), repr(r["greedy_risk"])] for r in detail_rows],
    )
    summary_rows = []
    for algo in algos:
        risks = np.array([r["risk"] for r in detail_rows if r["algorithm"] == algo])
        greedy = np.array([r["greedy_risk"] for r in detail_rows if r["algorithm"] == algo])
        risk_std = risks.std(ddof=1) if risks.size > 1 else 0.0
        greedy_std = greedy.std(ddof=1) if greedy.size > 1 else 0.0
        summary_rows.append(
            [algo, args.mode, args.variant, args.repetitions,
             repr(float(risks.mean())), repr(float(risk_std)),
             repr(float(greedy.mean())), repr(float(greedy_std))]
        )
    _write_csv(
        out / "summary.csv",
        ["algorithm", "mode", "variant", "repetitions",
         "risk_mean", "risk_std", "greedy_risk_mean", "greedy_risk_std"],
        summary_rows,
    )
    _write_config(out, {"command": "optimize", "seed": seed, **shared, "data": args.data,
                        "repetitions": args.repetitions, "jobs": args.jobs})
    for row in summary_rows:
        print(f"{row[0]}: risk {float(row[4]):.4f} ({float(row[5]):.4f}) "
              f"greedy {float(row[6]):.4f} ({float(row[7]):.4f})")
    return 0


# ----------------------------------------------------------------------
# coverage
# ----------------------------------------------------------------------


def cmd_coverage(args) -> int:
    seed = _resolve_seed(args.seed)
    if not 0 < args.delta < 1:
        raise _CliError("delta must lie in (0, 1)")
    if args.replications < 1:
        raise _CliError("replications must be positive")
    try:
        replay_counts = [int(tok) for tok in args.replay_counts.split(",") if tok.strip()]
    except ValueError as exc:
        raise _CliError(f"bad replay counts: {args.replay_counts}") from exc
    if not replay_counts or min(replay_counts) < 1:
        raise _CliError("replay counts must be positive integers")
    dataset = _load_dataset(args.data)
    kinds = _parse_divergences(args.divergence)
    spec = SplitSpec(seed=seed)
    splits = split_dataset(dataset, spec)
    policy0 = train_logging_policy(
        splits.logging, LoggingPolicyConfig(action_space=args.action_space, temperature=2.0)
    )
    # The evaluated policy controls how hard the study is: far-from-logging
    # policies have heavy-tailed weights and need much larger logs before
    # the asymptotic interval covers.  The default is a perturbed incumbent,
    # the regime the intervals are designed for (offline A/B comparison).
    if args.target_policy is not None:
        target = load_policy(args.target_policy)
    elif args.target_subset_frac is not None:
        if not 0 < args.target_subset_frac <= 1:
            raise _CliError("target-subset-frac must lie in (0, 1]")
        rng = np.random.default_rng(seed + 17)
        size = max(1, int(round(args.target_subset_frac * splits.train.n_rows)))
        idx = rng.choice(splits.train.n_rows, size=size, replace=False)
        target = train_logging_policy(
            splits.train.subset(idx),
            LoggingPolicyConfig(action_space=args.action_space, temperature=2.0),
        )
    else:
        rng = np.random.default_rng(seed + 17)
        target = LinearPolicy(
            theta=policy0.theta
            + args.target_perturbation * rng.normal(size=policy0.theta.shape),
            action_space=policy0.action_space,
            temperature=policy0.temperature,
        )
    rows = coverage_experiment(
        splits.train,
        target,
        policy0,
        replications=args.replications,
        delta=args.delta,
        kinds=kinds,
        replay_counts=replay_counts,
        seed=seed,
    )
    out = _prepare_out_dir(args.output_dir)
    write_coverage_csv(rows, out / "coverage.csv")
    _write_config(
        out,
        {"command": "coverage", "data": args.data, "replay_counts": replay_counts,
         "replications": args.replications, "delta": args.delta, "seed": seed,
         "divergence": args.divergence, "action_space": args.action_space},
    )
    covered = {}
    for row in rows:
        key = row.method if not row.divergence else f"{row.method}-{row.divergence}"
        covered.setdefault(key, []).append(row.covered)
    for key, values in sorted(covered.items()):
        print(f"{key}: coverage {np.mean(values):.3f} over {len(values)} intervals")
    return 0


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------


def _add_split_flags(parser) -> None:
    parser.add_argument("--train-frac", type=float, default=0.5)
    parser.add_argument("--validation-frac", type=float, default=0.25)
    parser.add_argument("--test-frac", type=float, default=0.25)
    parser.add_argument("--logging-frac", type=float, default=0.1,
                        help="fraction of the train split used to fit the logging policy")
    parser.add_argument("--action-space", choices=("factorized", "multiclass"),
                        default="factorized")
    parser.add_argument("--temperature", type=float, default=2.0,
                        help="smoothing temperature applied to the fitted logging policy")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cfdro", description=__doc__)
    parser.add_argument("--version", action="version", version=f"cfdro {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_convert = sub.add_parser("convert", help="supervised dataset to logged bandit feedback")
    p_convert.add_argument("--data", required=True,
                           help=f"LibSVM multilabel file, or '{_BUNDLED_SYNTHETIC}'")
    p_convert.add_argument("--output-dir", required=True)
    p_convert.add_argument("-P", "--replay-count", type=int, default=4)
    _add_split_flags(p_convert)
    p_convert.add_argument("--seed", type=int, default=None)
    p_convert.set_defaults(func=cmd_convert)

    p_eval = sub.add_parser("evaluate", help="confidence intervals for a policy on a log")
    p_eval.add_argument("--log", required=True)
    p_eval.add_argument("--policy", required=True)
    p_eval.add_argument("--delta", type=float, default=0.05,
                        help="failure probability (0.05 gives 95%% intervals)")
    p_eval.add_argument("--divergence", default="all")
    p_eval.add_argument("--weight-bound", type=float, default=None,
                        help="a-priori bound on |weighted cost| for the finite-time intervals")
    p_eval.add_argument("--output", default="-", help="CSV path, or '-' for stdout")
    p_eval.set_defaults(func=cmd_evaluate)

    p_opt = sub.add_parser("optimize", help="train policies and report test risks")
    p_opt.add_argument("--data", required=True)
    p_opt.add_argument("--output-dir", required=True)
    p_opt.add_argument("--algos", default="dro-chi2",
                       help=f"comma list from: {', '.join(_ALGO_CHOICES)}")
    p_opt.add_argument("--mode", choices=("batch", "stochastic"), default="batch")
    p_opt.add_argument("--variant", choices=("plain", "cv", "logtrick"), default="plain")
    p_opt.add_argument("--repetitions", type=int, default=20)
    p_opt.add_argument("-P", "--replay-count", type=int, default=4)
    p_opt.add_argument("--delta", type=float, default=0.05)
    p_opt.add_argument("--lambda-grid", default=_DEFAULT_LAMBDA_GRID)
    p_opt.add_argument("--max-iters", type=int, default=None)
    p_opt.add_argument("--batch-size", type=int, default=64)
    p_opt.add_argument("--step-size", type=float, default=0.05)
    p_opt.add_argument("--jobs", type=int, default=1)
    _add_split_flags(p_opt)
    p_opt.add_argument("--seed", type=int, default=None)
    p_opt.set_defaults(func=cmd_optimize)

    p_cov = sub.add_parser("coverage", help="interval coverage study over regenerated logs")
    p_cov.add_argument("--data", required=True)
    p_cov.add_argument("--output-dir", required=True)
    p_cov.add_argument("--replay-counts", default="1,2,4")
    p_cov.add_argument("--replications", "-R", type=int, default=20)
    p_cov.add_argument("--delta", type=float, default=0.05)
    p_cov.add_argument("--divergence", default="all")
    p_cov.add_argument("--action-space", choices=("factorized", "multiclass"),
                       default="factorized")
    p_cov.add_argument("--target-policy", default=None,
                       help="checkpoint of the policy to evaluate (default: perturbed incumbent)")
    p_cov.add_argument("--target-subset-frac", type=float, default=None,
                       help="instead fit the evaluated policy on this random fraction of train")
    p_cov.add_argument("--target-perturbation", type=float, default=0.2,
                       help="parameter noise for the default perturbed-incumbent target")
    p_cov.add_argument("--seed", type=int, default=None)
    p_cov.set_defaults(func=cmd_coverage)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
