# SPDX-License-Identifier: MIT
# SPDX-FileCopyrightText: 2026 sparse-verify contributors
"""Benchmark arms, offline profiling runs, cost calibration and reports."""

from __future__ import annotations

import csv
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
import json
from pathlib import Path
from statistics import mean, stdev
from time import perf_counter
from typing import Any

from .config import ArmKind, ArmSpec, RunConfig
from .const import LOGGER
from .cost_model import (
    CostCoeffs,
    StepAccounting,
    cost_breakdown,
    fit_cost_coeffs,
    median_relative_error,
)
from .engine import GuardSettings, SpeculativeRun, TimeSource, decode_speculative
from .exceptions import ConfigurationError, ProfileError
from .grouped import cross_layer_overlap
from .model import ToyTransformer
from .planner import (
    ContextBucket,
    PrecisionClass,
    ProfileTable,
    StepMetrics,
    StrategyTuple,
    base_strategy,
    bucket_of,
    preselect,
    profile_offline,
)

__all__ = [
    "BENCH_FIELDS",
    "BenchReport",
    "CostCalibration",
    "calibrate_cost",
    "profile_engine",
    "read_bench_csv",
    "render_report",
    "run_arm",
    "run_benchmark",
    "selection_stability",
    "summarize",
    "write_bench_csv",
    "write_summary",
]

BENCH_FIELDS = (
    "arm",
    "prompt",
    "repetition",
    "steps",
    "tokens",
    "sum_accepted",
    "sum_latency",
    "throughput",
    "mean_accepted",
    "refinement_events",
    "final_strategy",
    "unique_block_loads",
    "requested_block_loads",
    "index_constructions",
    "launches",
    "window_tokens",
    "wall_seconds",
)
"""Columns of the benchmark CSV, one row per (arm, prompt, repetition)."""


@dataclass(slots=True)
class BenchReport:
    rows: list[dict[str, Any]] = field(default_factory=list[dict[str, Any]])  # pyright:ignore[reportExplicitAny]
    summary: dict[str, dict[str, Any]] = field(default_factory=dict[str, dict[str, Any]])  # pyright:ignore[reportExplicitAny]


def run_arm(
    arm: ArmSpec,
    conf: RunConfig,
    target: ToyTransformer,
    draft: ToyTransformer,
    prompt: Sequence[int],
    profile: ProfileTable | None,
) -> SpeculativeRun:
    """Decode one prompt with the strategy an arm prescribes."""
    pclass = arm.precision_class or conf.precision_class
    guard: GuardSettings | None = None
    match arm.kind:
        case ArmKind.BASE:
            strategy, pclass = base_strategy(), PrecisionClass.STRICT
        case ArmKind.EXPLICIT:
            assert arm.strategy is not None
            strategy = arm.strategy
            pclass = arm.precision_class or strategy.precision_class
        case ArmKind.STATIC_BEST | ArmKind.BEST_R | ArmKind.BOOKKEEPING:
            if profile is None:
                raise ProfileError(f"arm '{arm.name}' ({arm.kind}) requires a profile")
            strategy, _ = preselect(profile, bucket_of(len(prompt)), pclass)
            if arm.kind is not ArmKind.STATIC_BEST:
                guard = arm.guard
                if guard.early_window is None:
                    guard = replace(guard, early_window=conf.early_window)
    return decode_speculative(
        target,
        draft,
        prompt,
        conf.steps,
        strategy,
        pclass,
        profile=profile,
        guard=guard,
        time_source=conf.time_source,
        coeffs=conf.cost_coeffs,
    )


def run_benchmark(
    conf: RunConfig,
    arms: Sequence[ArmSpec],
    target: ToyTransformer,
    draft: ToyTransformer,
    prompts: Sequence[Sequence[int]],
    profile: ProfileTable | None = None,
) -> BenchReport:
    """Run every arm on every prompt; throughput is sum(A) / sum(T) per row."""
    if not arms:
        raise ConfigurationError("no benchmark arms given")
    report = BenchReport()
    for arm in arms:
        for index, prompt in enumerate(prompts):
            for repetition in range(conf.repetitions):
                started = perf_counter()
                run = run_arm(arm, conf, target, draft, prompt, profile)
                report.rows.append(_row(arm.name, index, repetition, run, perf_counter() - started))
        LOGGER.info(f"[arm {arm.name}] {len(prompts)} prompts x {conf.repetitions} done")
    report.summary = summarize(report.rows)
    return report


def _row(arm: str, prompt: int, repetition: int, run: SpeculativeRun, wall: float) -> dict[str, Any]:  # pyright:ignore[reportExplicitAny]
    accounting = [s.accounting for s in run.steps]
    return {
        "arm": arm,
        "prompt": prompt,
        "repetition": repetition,
        "steps": len(run.steps),
        "tokens": len(run.tokens),
        "sum_accepted": run.total_accepted,
        "sum_latency": run.total_latency,
        "throughput": run.throughput,
        "mean_accepted": run.mean_accepted,
        "refinement_events": run.refinement_events,
        "final_strategy": run.steps[-1].strategy if run.steps else "",
        "unique_block_loads": sum(a.unique_loads for a in accounting),
        "requested_block_loads": sum(a.requested_loads for a in accounting),
        "index_constructions": sum(a.index_constructions for a in accounting),
        "launches": sum(a.launches for a in accounting),
        "window_tokens": sum(a.window_tokens for a in accounting),
        "wall_seconds": wall,
    }


def summarize(rows: Sequence[Mapping[str, Any]]) -> dict[str, dict[str, Any]]:  # pyright:ignore[reportExplicitAny]
    """Per-arm totals; gains are relative to the `base` arm when present."""
    summary: dict[str, dict[str, Any]] = {}  # pyright:ignore[reportExplicitAny]
    for arm in dict.fromkeys(str(r["arm"]) for r in rows):
        arm_rows = [r for r in rows if str(r["arm"]) == arm]
        accepted = sum(float(r["sum_accepted"]) for r in arm_rows)  # pyright:ignore[reportAny]
        latency = sum(float(r["sum_latency"]) for r in arm_rows)  # pyright:ignore[reportAny]
        steps = sum(int(r["steps"]) for r in arm_rows)  # pyright:ignore[reportAny]
        throughputs = [float(r["throughput"]) for r in arm_rows]  # pyright:ignore[reportAny]
        summary[arm] = {
            "rows": len(arm_rows),
            "throughput": accepted / latency if latency > 0 else 0.0,
            "mean_accepted": accepted / steps if steps else 0.0,
            "refinement_events": sum(int(r["refinement_events"]) for r in arm_rows),  # pyright:ignore[reportAny]
            "row_throughput_stdev": stdev(throughputs) if len(throughputs) > 1 else 0.0,
        }
    if "base" in summary and summary["base"]["throughput"] > 0:
        base = float(summary["base"]["throughput"])  # pyright:ignore[reportAny]
        for values in summary.values():
            values["gain_vs_base"] = float(values["throughput"]) / base - 1.0  # pyright:ignore[reportAny]
    return summary


def write_bench_csv(rows: Sequence[Mapping[str, Any]], path: str | Path) -> None:  # pyright:ignore[reportExplicitAny]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=BENCH_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_summary(summary: Mapping[str, Any], path: str | Path) -> None:  # pyright:ignore[reportExplicitAny]
    Path(path).write_text(json.dumps(summary, indent=2), encoding="utf-8")  # pyright:ignore[reportUnusedCallResult]


def read_bench_csv(path: str | Path) -> list[dict[str, Any]]:  # pyright:ignore[reportExplicitAny]
    """Read a benchmark CSV, checking every row's throughput against its totals."""
    try:
        with open(path, newline="", encoding="utf-8") as f:
            rows: list[dict[str, Any]] = list(csv.DictReader(f))  # pyright:ignore[reportExplicitAny]
    except OSError as e:
        raise ConfigurationError(f"cannot read benchmark CSV '{path}': {e}") from e
    for line, row in enumerate(rows, start=2):
        if missing := [c for c in BENCH_FIELDS if c not in row]:
            raise ConfigurationError(f"{path}:{line}: missing columns {missing}")
        latency = float(row["sum_latency"])  # pyright:ignore[reportAny]
        expected = float(row["sum_accepted"]) / latency if latency > 0 else 0.0  # pyright:ignore[reportAny]
        if abs(expected - float(row["throughput"])) > 1e-9 * max(1.0, expected):  # pyright:ignore[reportAny]
            raise ConfigurationError(f"{path}:{line}: throughput does not match sum_accepted/sum_latency")
    return rows


def render_report(rows: Sequence[Mapping[str, Any]]) -> str:  # pyright:ignore[reportExplicitAny]
    """Plain-text per-arm summary table."""
    summary = summarize(rows)
    header = f"{'arm':<20} {'rows':>5} {'throughput':>12} {'mean A':>8} {'events':>7} {'gain':>8}"
    lines = [header, "-" * len(header)]
    for arm, values in summary.items():
        gain = values.get("gain_vs_base")
        lines.append(
            f"{arm:<20} {values['rows']:>5} {values['throughput']:>12.4f} "
            f"{values['mean_accepted']:>8.3f} {values['refinement_events']:>7} "
            f"{'' if gain is None else f'{gain:+.1%}':>8}"
        )
    return "\n".join(lines)


def profile_engine(
    conf: RunConfig,
    target: ToyTransformer,
    draft: ToyTransformer,
    prompts: Mapping[ContextBucket, Sequence[Sequence[int]]],
    candidates: Mapping[PrecisionClass, Sequence[StrategyTuple]],
) -> ProfileTable:
    """Profile candidates end to end with the speculative decode loop."""
    coeffs = conf.cost_coeffs or CostCoeffs()

    def evaluate(strategy: StrategyTuple, prompt: Sequence[int]) -> list[StepMetrics]:
        run = decode_speculative(
            target, draft, prompt, conf.steps, strategy, strategy.precision_class,
            time_source=conf.time_source, coeffs=coeffs,
        )
        return [StepMetrics(s.accepted, s.latency) for s in run.steps]

    return profile_offline(prompts, candidates, evaluate, target.n_layers, cost_coeffs=coeffs)


@dataclass(frozen=True, slots=True)
class CostCalibration:
    coeffs: CostCoeffs
    median_error: float
    """Median relative error on the held-out steps."""
    strict_index_share: float
    """Mean share of index construction in the estimate of Strict steps."""
    train_steps: int
    test_steps: int


def selection_stability(model: ToyTransformer, prompts: Sequence[Sequence[int]]) -> dict[int, float]:
    """Cross-layer overlap of independently routed selections, by layer distance."""
    traces = [model.layer_selections(p) for p in prompts if p]
    if not traces or not traces[0]:
        return {}
    by_layer = [[sets for trace in traces for sets in trace[j]] for j in range(model.n_layers)]
    stability = cross_layer_overlap(by_layer)
    LOGGER.info(f"[stability] cross-layer overlap {stability}")
    return stability


def calibrate_cost(
    conf: RunConfig,
    target: ToyTransformer,
    draft: ToyTransformer,
    prompts: Sequence[Sequence[int]],
    strategies: Sequence[StrategyTuple],
    time_source: TimeSource = TimeSource.WALL,
) -> CostCalibration:
    """Fit cost coefficients to measured verification-pass times.

    Steps alternate between the training and the held-out split. With the modeled
    time source the fitted estimate reproduces the modeled step times.
    """
    samples: list[tuple[StepAccounting, float, bool]] = []
    for strategy in strategies:
        for prompt in prompts:
            run = decode_speculative(
                target, draft, prompt, conf.steps, strategy, strategy.precision_class,
                time_source=time_source, coeffs=conf.cost_coeffs,
            )
            strict = strategy.precision_class is PrecisionClass.STRICT
            samples.extend((s.accounting, s.latency, strict) for s in run.steps)
    if len(samples) < 10:
        raise ConfigurationError(f"cost calibration needs at least 10 steps, got {len(samples)}")
    train, test = samples[0::2], samples[1::2]
    coeffs = fit_cost_coeffs([a for a, _, _ in train], [t for _, t, _ in train])
    error = median_relative_error([a for a, _, _ in test], [t for _, t, _ in test], coeffs)
    shares = [cost_breakdown(a, coeffs)["index_share"] for a, _, strict in samples if strict]
    share = mean(shares) if shares else 0.0
    LOGGER.info(
        f"[cost] median relative error {error:.1%} on {len(test)} held-out steps, "
        f"Strict index share {share:.1%}"
    )
    return CostCalibration(coeffs, error, share, len(train), len(test))
