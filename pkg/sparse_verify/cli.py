# SPDX-License-Identifier: MIT
# SPDX-FileCopyrightText: 2026 sparse-verify contributors
"""Command-line interface."""

from __future__ import annotations

import argparse
from collections.abc import Sequence
from dataclasses import replace
import json
import logging
from pathlib import Path
import sys
from typing import Any

import colorlog

from .bench import (
    calibrate_cost,
    profile_engine,
    read_bench_csv,
    render_report,
    run_benchmark,
    selection_stability,
    summarize,
    write_bench_csv,
    write_summary,
)
from .config import (
    ArmKind,
    ArmSpec,
    RunConfig,
    build_models,
    load_arms,
    load_candidates,
    load_profile,
    load_prompts,
    profile_buckets,
    save_profile,
)
from .const import LOGGER, NAME
from .engine import GuardSettings, TimeSource, decode_autoregressive, decode_speculative
from .exceptions import ConfigurationError, SparseVerifyError
from .fusion import calibrate_reuse_schedule, parse_reuse_schedule
from .planner import (
    ContextBucket,
    PrecisionClass,
    StrategyTuple,
    base_strategy,
    bucket_of,
    make_candidate_grid,
    preselect,
)

__all__ = ["main"]

EXIT_ERROR = 1
EXIT_CONFIG = 2

LOG_FORMAT = "%(log_color)s%(levelname)-8s%(reset)s %(name)s: %(message)s"


def main(argv: Sequence[str] | None = None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    _setup_logging(logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO)  # pyright:ignore[reportAny]
    try:
        return int(args.func(args))  # pyright:ignore[reportAny]
    except SparseVerifyError as e:
        LOGGER.error(f"{args.command} failed")  # pyright:ignore[reportAny]
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_CONFIG if isinstance(e, ConfigurationError) else EXIT_ERROR


def _setup_logging(level: int) -> None:
    handler = colorlog.StreamHandler()
    handler.setFormatter(colorlog.ColoredFormatter(LOG_FORMAT))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=NAME, description="Sparse speculative verification engine.")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="log per-step detail")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="log warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decode", help="decode prompts autoregressively or speculatively")
    _add_config(p)
    p.add_argument("--prompt-file", help="UTF-8 file, one prompt per non-empty line")
    p.add_argument("--steps", type=int, help="tokens to generate per prompt")
    p.add_argument("--class", dest="pclass", help="precision class (strict, reuse-only, approx-only, approx+reuse)")
    p.add_argument("--strategy", help="explicit strategy 'D,k,T,C,M', e.g. '4,2,bfs,2,exact'")
    p.add_argument("--reuse-schedule", help="reuse layers: comma-separated ids, 'none' or 'alt'")
    p.add_argument("--budget", type=int, help="draft-tree node budget of an explicit strategy")
    p.add_argument("--profile", help="profile JSON; enables profile-driven planning")
    p.add_argument("--no-guard", action="store_true", help="use the profiled rank-1 strategy without refinement")
    p.add_argument("--seed", type=int, help="target model seed")
    p.add_argument("--time-source", choices=[str(t) for t in TimeSource])
    p.add_argument("--autoregressive", action="store_true", help="plain one-token-per-step decoding")
    p.add_argument("--shadow", action="store_true", help="report hidden-state deviation from Strict verification")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("profile", help="profile candidate strategies into a ranked table")
    _add_config(p)
    p.add_argument("--buckets", help="comma-separated context buckets (default: all)")
    p.add_argument("--classes", help="comma-separated precision classes (default: all)")
    p.add_argument("--candidates-file", help="JSON candidates per precision class")
    p.add_argument("--out", default="profile.json", help="output profile (default: %(default)s)")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("bench", help="run benchmark arms and write a CSV report")
    _add_config(p)
    p.add_argument("--arms-file", help="JSON list of arms (default: a single base arm)")
    p.add_argument("--profile", help="profile JSON for profile-driven arms")
    p.add_argument("--out", default="report.csv", help="CSV report (default: %(default)s)")
    p.add_argument("--summary", help="JSON summary (default: the report path with .json suffix)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("calibrate-schedule", help="greedily choose reuse layers within a deviation tolerance")
    _add_config(p)
    p.add_argument("--tolerance", type=float, default=0.05, help="mean relative deviation (default: %(default)s)")
    p.add_argument("--out", help="write the reuse layer ids as a JSON list")
    p.set_defaults(func=cmd_calibrate_schedule)

    p = sub.add_parser("calibrate-cost", help="fit cost-model coefficients to measured step times")
    _add_config(p)
    p.add_argument("--out", default="cost_coeffs.json", help="coefficients JSON (default: %(default)s)")
    p.set_defaults(func=cmd_calibrate_cost)

    p = sub.add_parser("report", help="render summary tables from a benchmark CSV")
    p.add_argument("csv", help="benchmark CSV written by 'bench'")
    p.add_argument("--json", action="store_true", help="print the summary as JSON")
    p.set_defaults(func=cmd_report)
    return parser


def _add_config(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-c", "--config", help="run config JSON")


def _run_config(args: argparse.Namespace) -> RunConfig:
    conf = RunConfig.load(args.config) if args.config else RunConfig()  # pyright:ignore[reportAny]
    changes: dict[str, Any] = {}  # pyright:ignore[reportExplicitAny]
    if getattr(args, "prompt_file", None):
        changes["prompt_file"] = args.prompt_file  # pyright:ignore[reportAny]
    if getattr(args, "steps", None) is not None:
        changes["steps"] = args.steps  # pyright:ignore[reportAny]
    if getattr(args, "pclass", None):
        changes["precision_class"] = _precision_class(args.pclass)  # pyright:ignore[reportAny]
        if conf.strategy is not None and conf.strategy.precision_class is not changes["precision_class"]:
            changes["strategy"] = None
    if getattr(args, "seed", None) is not None:
        changes["target"] = replace(conf.target, seed=args.seed)  # pyright:ignore[reportAny]
    if getattr(args, "time_source", None):
        changes["time_source"] = TimeSource(args.time_source)
    if getattr(args, "profile", None):
        changes["profile"] = args.profile  # pyright:ignore[reportAny]
    return replace(conf, **changes) if changes else conf  # pyright:ignore[reportAny]


def _precision_class(text: str) -> PrecisionClass:
    try:
        return PrecisionClass(text)
    except ValueError:
        raise ConfigurationError(f"unknown precision class '{text}'") from None


def _explicit_strategy(args: argparse.Namespace, conf: RunConfig) -> StrategyTuple | None:
    n_layers = conf.target.n_layers
    reuse = parse_reuse_schedule(args.reuse_schedule, n_layers) if args.reuse_schedule else None  # pyright:ignore[reportAny]
    if args.strategy:
        return StrategyTuple.parse(args.strategy, reuse or frozenset(), args.budget)  # pyright:ignore[reportAny]
    if conf.strategy is not None:
        return replace(conf.strategy, reuse_set=reuse) if reuse is not None else conf.strategy
    if reuse is not None:
        raise ConfigurationError("--reuse-schedule needs a strategy")
    return None


def cmd_decode(args: argparse.Namespace) -> int:
    conf = _run_config(args)
    target, draft = build_models(conf)
    prompts = load_prompts(conf)
    strategy = _explicit_strategy(args, conf)
    profile = load_profile(conf.profile) if conf.profile and not args.autoregressive else None  # pyright:ignore[reportAny]
    pclass = conf.precision_class

    for index, prompt in enumerate(prompts):
        if args.autoregressive:  # pyright:ignore[reportAny]
            tokens = decode_autoregressive(target, prompt, conf.steps)
            _emit({"prompt": index, "tokens": tokens})
            continue
        guard = None
        chosen = strategy
        if chosen is None and profile is not None:
            guard = GuardSettings(enabled=not args.no_guard, early_window=conf.early_window)  # pyright:ignore[reportAny]
            chosen, _ = preselect(profile, bucket_of(len(prompt)), pclass)
        elif chosen is None:
            if pclass is not PrecisionClass.STRICT:
                raise ConfigurationError(f"class {pclass} needs --strategy or --profile")
            chosen = base_strategy()
        run = decode_speculative(
            target,
            draft,
            prompt,
            conf.steps,
            chosen,
            pclass,
            profile=profile,
            guard=guard,
            time_source=conf.time_source,
            coeffs=conf.cost_coeffs,
            shadow=args.shadow,  # pyright:ignore[reportAny]
        )
        record: dict[str, Any] = {  # pyright:ignore[reportExplicitAny]
            "prompt": index,
            "tokens": run.tokens,
            "steps": len(run.steps),
            "mean_accepted": run.mean_accepted,
            "throughput": run.throughput,
            "refinement_events": run.refinement_events,
            "final_strategy": run.steps[-1].strategy if run.steps else chosen.label,
        }
        if args.shadow:  # pyright:ignore[reportAny]
            deviations = [s.hidden_deviation for s in run.steps if s.hidden_deviation is not None]
            record["hidden_deviation"] = sum(deviations) / len(deviations) if deviations else 0.0
        _emit(record)
    return 0


def cmd_profile(args: argparse.Namespace) -> int:
    conf = _run_config(args)
    target, draft = build_models(conf)
    buckets = profile_buckets(args.buckets)  # pyright:ignore[reportAny]
    if args.classes:  # pyright:ignore[reportAny]
        classes = [_precision_class(c.strip()) for c in str(args.classes).split(",") if c.strip()]  # pyright:ignore[reportAny]
    else:
        classes = list(PrecisionClass)
    if args.candidates_file:  # pyright:ignore[reportAny]
        loaded = load_candidates(args.candidates_file)  # pyright:ignore[reportAny]
        candidates = {p: loaded[p] for p in classes if p in loaded}
    else:
        candidates = {p: make_candidate_grid(p, target.n_layers) for p in classes}
    if not candidates:
        raise ConfigurationError("no candidates for the requested precision classes")

    prompts: dict[ContextBucket, list[list[int]]] = {}
    for bucket in buckets:
        in_bucket = [p for p in load_prompts(conf, bucket) if bucket_of(len(p)) is bucket]
        if not in_bucket:
            raise ConfigurationError(f"no profiling prompt falls into bucket {bucket}")
        prompts[bucket] = in_bucket
    table = profile_engine(conf, target, draft, prompts, candidates)
    save_profile(table, args.out)  # pyright:ignore[reportAny]
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    conf = _run_config(args)
    target, draft = build_models(conf)
    arms = load_arms(args.arms_file) if args.arms_file else [ArmSpec("base", ArmKind.BASE)]  # pyright:ignore[reportAny]
    profile = load_profile(conf.profile) if conf.profile else None
    report = run_benchmark(conf, arms, target, draft, load_prompts(conf), profile)
    out = Path(args.out)  # pyright:ignore[reportAny]
    write_bench_csv(report.rows, out)
    write_summary(report.summary, args.summary or out.with_suffix(".json"))  # pyright:ignore[reportAny]
    LOGGER.info(f"[bench] wrote {len(report.rows)} rows to {out}")
    print(render_report(report.rows))
    return 0


def cmd_calibrate_schedule(args: argparse.Namespace) -> int:
    conf = _run_config(args)
    target, _ = build_models(conf)
    prompts = load_prompts(conf)
    result = calibrate_reuse_schedule(prompts, target, args.tolerance)  # pyright:ignore[reportAny]
    reuse = sorted(result.reuse_set)
    if args.out:  # pyright:ignore[reportAny]
        Path(args.out).write_text(json.dumps(reuse), encoding="utf-8")  # pyright:ignore[reportAny, reportUnusedCallResult]
    stability = selection_stability(target, prompts)
    _emit(
        {
            "reuse_set": reuse,
            "order": result.order,
            "deviations": result.deviations,
            "cross_layer_overlap": stability,
        }
    )
    return 0


def cmd_calibrate_cost(args: argparse.Namespace) -> int:
    conf = _run_config(args)
    target, draft = build_models(conf)
    strategies = [base_strategy()]
    for pclass in PrecisionClass:
        strategies.extend(make_candidate_grid(pclass, target.n_layers)[::8])
    result = calibrate_cost(conf, target, draft, load_prompts(conf), strategies)
    Path(args.out).write_text(json.dumps(result.coeffs.to_dict(), indent=2), encoding="utf-8")  # pyright:ignore[reportAny, reportUnusedCallResult]
    _emit(
        {
            "coefficients": result.coeffs.to_dict(),
            "median_relative_error": result.median_error,
            "strict_index_share": result.strict_index_share,
            "train_steps": result.train_steps,
            "test_steps": result.test_steps,
        }
    )
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    rows = read_bench_csv(args.csv)  # pyright:ignore[reportAny]
    if args.json:  # pyright:ignore[reportAny]
        _emit(summarize(rows))
    else:
        print(render_report(rows))
    return 0


def _emit(record: object) -> None:
    print(json.dumps(record))
