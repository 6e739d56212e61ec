# SPDX-License-Identifier: MIT
# SPDX-FileCopyrightText: 2026 sparse-verify contributors
from collections.abc import Callable, Sequence

import pytest

from sparse_verify.draft_tree import Traversal
from sparse_verify.exceptions import ConfigurationError
from sparse_verify.grouped import CoarseningMode
from sparse_verify.planner import (
    ContextBucket,
    PrecisionClass,
    ProfiledCandidate,
    ProfileTable,
    RefinerState,
    StepMetrics,
    StrategyTuple,
    base_strategy,
    bucket_of,
    make_candidate_grid,
    preselect,
    profile_offline,
    refine_step,
)

N_LAYERS = 8
BUCKET = ContextBucket.B0_4K
STRICT = PrecisionClass.STRICT


def strict(depth: int, width: int = 2) -> StrategyTuple:
    return StrategyTuple(depth, width, Traversal.BFS, 2, CoarseningMode.EXACT)


def table_of(*candidates: tuple[StrategyTuple, float, float]) -> ProfileTable:
    return ProfileTable(
        {(BUCKET, STRICT): [ProfiledCandidate(s, a, t) for s, a, t in candidates]}, N_LAYERS
    )


def run_trace(
    state: RefinerState,
    table: ProfileTable,
    accepted: Callable[[int, int], float],
    latency: Callable[[int], float] = lambda rank: 1.0,
    steps: int = 32,
) -> RefinerState:
    """Feed observations that depend on the step and the active rank."""
    for step in range(1, steps + 1):
        metrics = StepMetrics(round(accepted(step, state.active)), latency(state.active))
        _, state = refine_step(state, metrics, table, BUCKET, STRICT, step)
    return state


@pytest.mark.parametrize(
    ("length", "bucket"),
    [(0, "0-4k"), (4095, "0-4k"), (4096, "4-8k"), (12288, "12-16k"), (20000, "12-16k")],
)
def test_bucket_of(length: int, bucket: str):
    assert bucket_of(length) == ContextBucket(bucket)


def test_bucket_of_rejects_negative():
    with pytest.raises(ConfigurationError):
        bucket_of(-1)


def test_precision_class_of_strategy():
    assert strict(4).precision_class is PrecisionClass.STRICT
    reuse = StrategyTuple(4, 2, Traversal.DFS, 2, CoarseningMode.EXACT, frozenset({1, 3}))
    assert reuse.precision_class is PrecisionClass.REUSE_ONLY
    approx = StrategyTuple(4, 2, Traversal.DFS, 2, CoarseningMode.APPROXIMATE)
    assert approx.precision_class is PrecisionClass.APPROX_ONLY
    assert PrecisionClass("approx_reuse") is PrecisionClass.APPROX_REUSE
    with pytest.raises(ConfigurationError):
        approx.validate(PrecisionClass.STRICT, N_LAYERS)
    with pytest.raises(ConfigurationError):
        StrategyTuple(4, 2, Traversal.BFS, 2, CoarseningMode.EXACT, frozenset({8})).validate(
            PrecisionClass.REUSE_ONLY, N_LAYERS
        )


def test_strategy_parse():
    parsed = StrategyTuple.parse("4,2,dfs,3,approx", frozenset({2}), 30)
    assert parsed == StrategyTuple(4, 2, Traversal.DFS, 3, CoarseningMode.APPROXIMATE, frozenset({2}), 30)
    assert parsed.label == "D4k2-dfs-C3-approximate-S2-B30"
    for text in ("4,2,bfs,2", "4,2,sideways,2,exact", "0,2,bfs,2,exact"):
        with pytest.raises(ConfigurationError):
            StrategyTuple.parse(text)


def test_base_strategy():
    base = base_strategy()
    assert (base.depth, base.width, base.coarsening, base.budget) == (6, 10, 2, 128)
    assert base.precision_class is PrecisionClass.STRICT


@pytest.mark.parametrize("pclass", list(PrecisionClass))
def test_candidate_grid_respects_class(pclass: PrecisionClass):
    grid = make_candidate_grid(pclass, N_LAYERS)
    assert len(grid) >= 12
    assert all(s.precision_class is pclass for s in grid)


def simulated(strategy: StrategyTuple, prompt: Sequence[int]) -> list[StepMetrics]:
    accepted = 1 + min(strategy.depth, 2 + len(prompt) % 3)
    latency = 1.0 + 0.05 * strategy.depth * strategy.width + 0.02 * strategy.coarsening + 0.1 * len(
        strategy.reuse_set
    )
    if strategy.mode is CoarseningMode.APPROXIMATE:
        latency *= 0.9
    return [StepMetrics(accepted, latency) for _ in range(4)]


def test_profile_table_shape_and_ranking():
    prompts = {bucket: [[1] * (bucket.lower + 10), [2] * (bucket.lower + 11)] for bucket in ContextBucket}
    candidates = {p: make_candidate_grid(p, N_LAYERS) for p in PrecisionClass}
    table = profile_offline(prompts, candidates, simulated, N_LAYERS)

    assert len(table.keys()) == 16
    assert table.strategy_count == 192
    for bucket, pclass in table.keys():
        ranked = table.entry(bucket, pclass)
        assert len(ranked) == 12
        assert all(c.strategy.precision_class is pclass for c in ranked)
        # Independent recomputation of E[A] / E[T] over all steps of all prompts.
        expected: list[tuple[float, str]] = []
        for strategy in candidates[pclass]:
            steps = [m for prompt in prompts[bucket] for m in simulated(strategy, prompt)]
            mean_a = sum(m.accepted for m in steps) / len(steps)
            mean_t = sum(m.latency for m in steps) / len(steps)
            expected.append((mean_a / mean_t, strategy.label))
        expected.sort(key=lambda e: -e[0])
        assert [c.thr for c in ranked] == pytest.approx([thr for thr, _ in expected[:12]])


def test_profile_lookup_is_counted_and_round_trips():
    table = table_of((strict(4), 3.0, 1.5), (strict(3), 2.5, 1.4))
    strategy, expected = preselect(table, BUCKET, STRICT)
    assert (strategy, expected) == (strict(4), 3.0)
    assert table.access_count == 1
    restored = ProfileTable.from_dict(table.to_dict())
    assert restored.entry(BUCKET, STRICT) == table.entry(BUCKET, STRICT)
    with pytest.raises(ConfigurationError):
        table.entry(ContextBucket.B4_8K, STRICT)
    with pytest.raises(ConfigurationError):
        preselect(table_of(), BUCKET, STRICT)


def test_profile_rejects_misclassified_strategy():
    approx = StrategyTuple(4, 2, Traversal.BFS, 2, CoarseningMode.APPROXIMATE)
    with pytest.raises(ConfigurationError):
        table_of((approx, 3.0, 1.0))


def three_ranks() -> ProfileTable:
    return table_of((strict(6), 4.0, 1.0), (strict(4), 4.0, 1.0), (strict(3), 4.0, 1.0))


def test_guard_switches_at_step_13_on_constant_trace():
    table = three_ranks()
    state = run_trace(RefinerState.start(table, BUCKET, STRICT), table, lambda step, rank: 2.0)
    assert [(e.step, e.kind) for e in state.events] == [(13, "switch"), (18, "switch"), (23, "settle")]
    assert state.transitions == 2
    assert state.settled
    # All explored strategies tie on observed throughput; the better-ranked wins.
    assert state.active == 0


def test_guard_stays_when_observation_matches_profile():
    table = three_ranks()
    state = run_trace(RefinerState.start(table, BUCKET, STRICT), table, lambda step, rank: 4.0)
    assert state.events == []
    assert state.active == 0


def test_guard_cap_falls_back_to_best_explored():
    table = three_ranks()
    state = run_trace(
        RefinerState.start(table, BUCKET, STRICT),
        table,
        lambda step, rank: 2.0,
        latency=lambda rank: 0.5 if rank == 1 else 1.0,
    )
    assert state.switch_count == 2
    assert state.events[-1].kind == "settle"
    assert state.active == 1
    assert len(state.events) == 3


def noisy(step: int, rank: int) -> float:
    """Four low steps, two high steps, repeating after the warmup."""
    if step <= 8:
        return 4.0
    return 2.0 if (step - 9) % 6 < 4 else 6.0


def test_guard_hysteresis_direction():
    table = three_ranks()
    events = [
        len(run_trace(RefinerState.start(table, BUCKET, STRICT, hysteresis=h), table, noisy).events)
        for h in (3, 5, 8)
    ]
    assert events[0] >= events[1] >= events[2]
    assert events[0] > 0


def test_bookkeeping_guard_never_switches():
    table = three_ranks()
    state = run_trace(
        RefinerState.start(table, BUCKET, STRICT, bookkeeping_only=True), table, lambda step, rank: 2.0
    )
    assert state.events == []
    assert state.active == 0
    assert state.below_count == 32 - 8
    assert state.ema == pytest.approx(2.0)
    assert len(state.buckets) == 32


def test_guard_ignores_steps_after_the_early_window():
    table = three_ranks()
    state = RefinerState.start(table, BUCKET, STRICT, early_window=10)
    state = run_trace(state, table, lambda step, rank: 2.0, steps=40)
    assert state.events == []
    assert state.below_count == 2


def test_guard_parameters_are_validated():
    table = three_ranks()
    with pytest.raises(ConfigurationError):
        RefinerState.start(table, BUCKET, STRICT, alpha=0.0)
    with pytest.raises(ConfigurationError):
        RefinerState.start(table, BUCKET, STRICT, rho=1.0)
    with pytest.raises(ConfigurationError):
        StepMetrics(0, 1.0)


def simulate_arm(table: ProfileTable | None, truth: dict[StrategyTuple, tuple[int, float]], steps: int = 64) -> float:
    """Modeled-time throughput of a request; no table means the Base strategy throughout."""
    if table is None:
        a, t = truth[base_strategy()]
        return a * steps / (t * steps)
    state = RefinerState.start(table, BUCKET, STRICT)
    total_a = total_t = 0.0
    for step in range(1, steps + 1):
        a, t = truth[state.strategy]
        total_a += a
        total_t += t
        refine_step(state, StepMetrics(a, t), table, BUCKET, STRICT, step)
    return total_a / total_t


def test_refinement_recovers_from_mismatched_top_candidate():
    mismatched, runner_up = strict(6, 4), strict(3, 2)
    # The profile promises 5 tokens per step from the top candidate; held-out
    # prompts only get 2.
    table = table_of((mismatched, 5.0, 1.0), (runner_up, 3.0, 1.0))
    truth = {mismatched: (2, 1.0), runner_up: (3, 1.0), base_strategy(): (2, 1.25)}

    base = simulate_arm(None, truth)
    static_best = 2 / 1.0
    best_r = simulate_arm(table, truth)
    assert best_r >= static_best >= base
    assert best_r > static_best
