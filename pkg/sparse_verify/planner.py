# SPDX-License-Identifier: MIT
# SPDX-FileCopyrightText: 2026 sparse-verify contributors
"""Profile-guided strategy planning.

Strategies are profiled offline per (context bucket, precision class) into a ranked
table. A request starts from the rank-1 entry of its bucket and class; during the
first verification steps a guard compares the smoothed accepted-token count with the
profiled expectation and walks down the ranking when the prompt underperforms.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
import itertools
import json
from typing import Any, Self

from typing_extensions import override

from .const import (
    BASE_BUDGET,
    BASE_COARSENING,
    BASE_DEPTH,
    BASE_WIDTH,
    BUCKET_WIDTH,
    GUARD_ALPHA,
    GUARD_EARLY_WINDOW,
    GUARD_HYSTERESIS,
    GUARD_MAX_TRANSITIONS,
    GUARD_RHO,
    GUARD_WARMUP,
    LOGGER,
    PROFILE_CANDIDATES,
)
from .cost_model import CostCoeffs
from .draft_tree import Traversal
from .exceptions import ConfigurationError
from .fusion import resolve_layer_roles
from .grouped import CoarseningMode

__all__ = [
    "ContextBucket",
    "PrecisionClass",
    "ProfileTable",
    "ProfiledCandidate",
    "RefinementEvent",
    "RefinerState",
    "RunSummary",
    "StepMetrics",
    "StrategyTuple",
    "base_strategy",
    "bucket_of",
    "make_candidate_grid",
    "preselect",
    "profile_offline",
    "refine_step",
]


class PrecisionClass(StrEnum):
    STRICT = "strict"  # exact coarsening, all-refresh
    REUSE_ONLY = "reuse-only"  # exact coarsening, some reuse layers
    APPROX_ONLY = "approx-only"  # approximate coarsening, all-refresh
    APPROX_REUSE = "approx+reuse"  # approximate coarsening, some reuse layers

    @override
    @classmethod
    def _missing_(cls, value: object) -> PrecisionClass | None:
        if isinstance(value, str):
            key = value.lower().replace("_", "-").replace(" ", "")
            for member in cls:
                if member.value == key or member.name.lower().replace("_", "-") == key:
                    return member
        return None

    @classmethod
    def of(cls, mode: CoarseningMode, reuse_set: frozenset[int]) -> PrecisionClass:
        if mode is CoarseningMode.EXACT:
            return cls.REUSE_ONLY if reuse_set else cls.STRICT
        return cls.APPROX_REUSE if reuse_set else cls.APPROX_ONLY


class ContextBucket(StrEnum):
    B0_4K = "0-4k"
    B4_8K = "4-8k"
    B8_12K = "8-12k"
    B12_16K = "12-16k"

    @property
    def index(self) -> int:
        return list(ContextBucket).index(self)

    @property
    def lower(self) -> int:
        """Smallest context length of the bucket."""
        return self.index * BUCKET_WIDTH


def bucket_of(context_len: int) -> ContextBucket:
    """Half-open 4K buckets; longer contexts fall into the top bucket."""
    if context_len < 0:
        raise ConfigurationError(f"context length must be >= 0, got {context_len}")
    buckets = list(ContextBucket)
    return buckets[min(context_len // BUCKET_WIDTH, len(buckets) - 1)]


@dataclass(frozen=True, slots=True)
class StrategyTuple:
    """Draft-tree shape plus sparse-verification settings."""

    depth: int
    width: int
    traversal: Traversal = Traversal.BFS
    coarsening: int = 1
    mode: CoarseningMode = CoarseningMode.EXACT
    reuse_set: frozenset[int] = frozenset()
    budget: int | None = None
    """Optional draft-tree node budget."""

    def __post_init__(self) -> None:
        if self.depth < 1 or self.width < 1 or self.coarsening < 1:
            raise ConfigurationError(
                f"depth, width and coarsening must be >= 1 in {self.label}"
            )
        if self.budget is not None and self.budget < 1:
            raise ConfigurationError(f"node budget must be >= 1 in {self.label}")

    @property
    def precision_class(self) -> PrecisionClass:
        return PrecisionClass.of(self.mode, self.reuse_set)

    @property
    def label(self) -> str:
        schedule = "+".join(str(j) for j in sorted(self.reuse_set)) or "none"
        budget = f"-B{self.budget}" if self.budget is not None else ""
        return (
            f"D{self.depth}k{self.width}-{self.traversal}-C{self.coarsening}"
            f"-{self.mode}-S{schedule}{budget}"
        )

    def validate(self, pclass: PrecisionClass, n_layers: int) -> None:
        """Raise unless the strategy is valid for `pclass` on an `n_layers` model."""
        resolve_layer_roles(self.reuse_set, n_layers)  # pyright:ignore[reportUnusedCallResult]
        if self.precision_class is not pclass:
            raise ConfigurationError(
                f"strategy {self.label} is {self.precision_class}, not valid for class {pclass}"
            )

    @classmethod
    def parse(cls, text: str, reuse_set: frozenset[int] = frozenset(), budget: int | None = None) -> Self:
        """Parse the `D,k,T,C,M` command-line form."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 5:
            raise ConfigurationError(f"strategy must be 'D,k,T,C,M', got '{text}'")
        try:
            return cls(
                int(parts[0]),
                int(parts[1]),
                Traversal(parts[2]),
                int(parts[3]),
                CoarseningMode(parts[4]),
                reuse_set,
                budget,
            )
        except ValueError as e:
            raise ConfigurationError(f"invalid strategy '{text}': {e}") from e

    def to_dict(self) -> dict[str, Any]:  # pyright:ignore[reportExplicitAny]
        return {
            "depth": self.depth,
            "width": self.width,
            "traversal": str(self.traversal),
            "coarsening": self.coarsening,
            "mode": str(self.mode),
            "reuse_set": sorted(self.reuse_set),
            "budget": self.budget,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Self:  # pyright:ignore[reportExplicitAny]
        budget = data.get("budget")
        return cls(
            int(data["depth"]),  # pyright:ignore[reportAny]
            int(data["width"]),  # pyright:ignore[reportAny]
            Traversal(data.get("traversal", Traversal.BFS)),
            int(data.get("coarsening", 1)),  # pyright:ignore[reportAny]
            CoarseningMode(data.get("mode", CoarseningMode.EXACT)),
            frozenset(int(j) for j in data.get("reuse_set", ())),  # pyright:ignore[reportAny]
            None if budget is None else int(budget),  # pyright:ignore[reportAny]
        )


def base_strategy() -> StrategyTuple:
    """Fixed Base configuration: 128-node tree, BFS, exact coarsening, all-refresh."""
    return StrategyTuple(
        BASE_DEPTH, BASE_WIDTH, Traversal.BFS, BASE_COARSENING, CoarseningMode.EXACT,
        frozenset(), BASE_BUDGET,
    )


@dataclass(frozen=True, slots=True)
class ProfiledCandidate:
    strategy: StrategyTuple
    exp_a: float
    """Expected accepted tokens per verification step."""
    exp_t: float
    """Expected verification-step latency."""

    @property
    def thr(self) -> float:
        return self.exp_a / self.exp_t

    def to_dict(self) -> dict[str, Any]:  # pyright:ignore[reportExplicitAny]
        return {
            "strategy": self.strategy.to_dict(),
            "expA": self.exp_a,
            "expT": self.exp_t,
            "thr": self.thr,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Self:  # pyright:ignore[reportExplicitAny]
        return cls(
            StrategyTuple.from_dict(data["strategy"]),  # pyright:ignore[reportAny]
            float(data["expA"]),  # pyright:ignore[reportAny]
            float(data["expT"]),  # pyright:ignore[reportAny]
        )


class ProfileTable:
    """Ranked candidates per (context bucket, precision class)."""

    def __init__(
        self,
        entries: Mapping[tuple[ContextBucket, PrecisionClass], Sequence[ProfiledCandidate]],
        n_layers: int,
        cost_coeffs: CostCoeffs | None = None,
    ) -> None:
        super().__init__()
        self._entries = {key: list(cands) for key, cands in entries.items()}
        self.n_layers = n_layers
        self.cost_coeffs = cost_coeffs
        self.access_count = 0
        for (_, pclass), cands in self._entries.items():
            for cand in cands:
                cand.strategy.validate(pclass, n_layers)

    def entry(self, bucket: ContextBucket, pclass: PrecisionClass) -> list[ProfiledCandidate]:
        self.access_count += 1
        ranked = self._entries.get((bucket, pclass))
        if not ranked:
            raise ConfigurationError(f"profile has no entry for ({bucket}, {pclass})")
        return ranked

    def keys(self) -> list[tuple[ContextBucket, PrecisionClass]]:
        return list(self._entries)

    @property
    def strategy_count(self) -> int:
        return sum(len(c) for c in self._entries.values())

    def to_dict(self) -> dict[str, Any]:  # pyright:ignore[reportExplicitAny]
        buckets: dict[str, dict[str, list[dict[str, Any]]]] = {}  # pyright:ignore[reportExplicitAny]
        for (bucket, pclass), cands in self._entries.items():
            buckets.setdefault(str(bucket), {})[str(pclass)] = [c.to_dict() for c in cands]
        data: dict[str, Any] = {"n_layers": self.n_layers, "buckets": buckets}  # pyright:ignore[reportExplicitAny]
        if self.cost_coeffs is not None:
            data["cost_coeffs"] = self.cost_coeffs.to_dict()
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Self:  # pyright:ignore[reportExplicitAny]
        entries: dict[tuple[ContextBucket, PrecisionClass], list[ProfiledCandidate]] = {}
        for bucket, classes in data["buckets"].items():  # pyright:ignore[reportAny]
            for pclass, cands in classes.items():  # pyright:ignore[reportAny]
                entries[(ContextBucket(bucket), PrecisionClass(pclass))] = [
                    ProfiledCandidate.from_dict(c) for c in cands  # pyright:ignore[reportAny]
                ]
        coeffs = data.get("cost_coeffs")
        return cls(
            entries,
            int(data["n_layers"]),  # pyright:ignore[reportAny]
            CostCoeffs.from_dict(coeffs) if coeffs is not None else None,  # pyright:ignore[reportAny]
        )


@dataclass(frozen=True, slots=True)
class StepMetrics:
    accepted: int
    """Accepted tokens this step, bonus included."""
    latency: float

    def __post_init__(self) -> None:
        if self.accepted < 1:
            raise ConfigurationError(f"accepted tokens per step must be >= 1, got {self.accepted}")
        if self.latency <= 0:
            raise ConfigurationError(f"step latency must be positive, got {self.latency}")


@dataclass(slots=True)
class RunSummary:
    """Per-step totals of one profiled run."""

    sum_accepted: float = 0.0
    sum_latency: float = 0.0
    steps: int = 0

    def add(self, metrics: StepMetrics) -> None:
        self.sum_accepted += metrics.accepted
        self.sum_latency += metrics.latency
        self.steps += 1

    @property
    def mean_accepted(self) -> float:
        return self.sum_accepted / self.steps if self.steps else 0.0

    @property
    def mean_latency(self) -> float:
        return self.sum_latency / self.steps if self.steps else 0.0

    @property
    def throughput(self) -> float:
        return self.sum_accepted / self.sum_latency if self.sum_latency > 0 else 0.0


def profile_offline(
    prompts: Mapping[ContextBucket, Sequence[Sequence[int]]],
    candidates: Mapping[PrecisionClass, Sequence[StrategyTuple]],
    evaluate: Callable[[StrategyTuple, Sequence[int]], Sequence[StepMetrics]],
    n_layers: int,
    *,
    keep: int = PROFILE_CANDIDATES,
    cost_coeffs: CostCoeffs | None = None,
) -> ProfileTable:
    """Run every valid candidate on every prompt of every bucket and rank by E[A]/E[T].

    E[A] and E[T] are means over all steps of all prompts of the bucket.
    """
    entries: dict[tuple[ContextBucket, PrecisionClass], list[ProfiledCandidate]] = {}
    for bucket, bucket_prompts in prompts.items():
        if not bucket_prompts:
            raise ConfigurationError(f"no profiling prompt for bucket {bucket}")
        for pclass, strategies in candidates.items():
            valid = [s for s in strategies if _is_valid(s, pclass, n_layers)]
            if not valid:
                raise ConfigurationError(f"no valid candidate for ({bucket}, {pclass})")
            scored: list[ProfiledCandidate] = []
            for strategy in valid:
                summary = RunSummary()
                for prompt in bucket_prompts:
                    for metrics in evaluate(strategy, prompt):
                        summary.add(metrics)
                scored.append(ProfiledCandidate(strategy, summary.mean_accepted, summary.mean_latency))
            ranked = sorted(scored, key=lambda c: -c.thr)[:keep]
            if len(ranked) < keep:
                LOGGER.warning(f"[profile] ({bucket}, {pclass}): only {len(ranked)} candidates")
            entries[(bucket, pclass)] = ranked
            LOGGER.info(
                f"[profile] ({bucket}, {pclass}): best {ranked[0].strategy.label} "
                f"thr={ranked[0].thr:.4f}"
            )
    return ProfileTable(entries, n_layers, cost_coeffs)


def preselect(
    table: ProfileTable, bucket: ContextBucket, pclass: PrecisionClass
) -> tuple[StrategyTuple, float]:
    """Rank-1 strategy of the entry and its expected accepted tokens."""
    ranked = table.entry(bucket, pclass)
    return ranked[0].strategy, ranked[0].exp_a


def make_candidate_grid(pclass: PrecisionClass, n_layers: int) -> list[StrategyTuple]:
    """Default candidate space of a precision class."""
    approx = pclass in (PrecisionClass.APPROX_ONLY, PrecisionClass.APPROX_REUSE)
    mode = CoarseningMode.APPROXIMATE if approx else CoarseningMode.EXACT
    if pclass in (PrecisionClass.STRICT, PrecisionClass.APPROX_ONLY) or n_layers < 2:
        schedules = [frozenset[int]()]
    else:
        schedules = [frozenset(range(1, n_layers, 2)), frozenset(range(n_layers // 2, n_layers))]
    shapes = [(2, 2), (3, 2), (4, 2), (4, 3), (6, 4), (3, 4)]
    grid = [
        StrategyTuple(depth, width, traversal, coarsening, mode, schedule)
        for (depth, width), traversal, coarsening, schedule in itertools.product(
            shapes, Traversal, (2, 4), schedules
        )
    ]
    return [s for s in grid if _is_valid(s, pclass, n_layers)]


@dataclass(frozen=True, slots=True)
class RefinementEvent:
    step: int
    kind: str  # "switch" or "settle"
    from_label: str
    to_label: str
    ema: float


@dataclass(slots=True)
class ExploredStrategy:
    rank: int
    candidate: ProfiledCandidate
    observed: RunSummary = field(default_factory=RunSummary)


@dataclass(slots=True)
class RefinerState:
    """Guard state of one request."""

    candidates: list[ProfiledCandidate]
    """Ranking preselected at request start."""
    alpha: float = GUARD_ALPHA
    rho: float = GUARD_RHO
    warmup: int = GUARD_WARMUP
    hysteresis: int = GUARD_HYSTERESIS
    max_transitions: int = GUARD_MAX_TRANSITIONS
    early_window: int = GUARD_EARLY_WINDOW
    bookkeeping_only: bool = False
    ema: float | None = None
    below_count: int = 0
    transitions: int = 0
    active: int = 0
    """Rank of the active candidate."""
    settled: bool = False
    explored: list[ExploredStrategy] = field(default_factory=list[ExploredStrategy])
    events: list[RefinementEvent] = field(default_factory=list[RefinementEvent])
    buckets: list[ContextBucket] = field(default_factory=list[ContextBucket])

    def __post_init__(self) -> None:
        if not 0 < self.alpha <= 1:
            raise ConfigurationError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0 < self.rho < 1:
            raise ConfigurationError(f"rho must be in (0, 1), got {self.rho}")
        if self.warmup < 0 or self.hysteresis < 1 or self.max_transitions < 0:
            raise ConfigurationError("warmup, hysteresis and transition cap must be valid counts")
        if not self.candidates:
            raise ConfigurationError("refinement needs at least one candidate")
        if not self.explored:
            self.explored.append(ExploredStrategy(0, self.candidates[0]))

    @classmethod
    def start(
        cls, table: ProfileTable, bucket: ContextBucket, pclass: PrecisionClass, **guard: Any  # pyright:ignore[reportExplicitAny, reportAny]
    ) -> RefinerState:
        return cls(list(table.entry(bucket, pclass)), **guard)  # pyright:ignore[reportAny]

    @property
    def strategy(self) -> StrategyTuple:
        return self.candidates[self.active].strategy

    @property
    def expected(self) -> float:
        return self.candidates[self.active].exp_a

    @property
    def switch_count(self) -> int:
        return sum(1 for e in self.events if e.kind == "switch")

    def _explored(self, rank: int) -> ExploredStrategy:
        for item in self.explored:
            if item.rank == rank:
                return item
        item = ExploredStrategy(rank, self.candidates[rank])
        self.explored.append(item)
        return item


def refine_step(
    state: RefinerState,
    metrics: StepMetrics,
    table: ProfileTable | None,
    bucket: ContextBucket,
    pclass: PrecisionClass,
    step: int,
    early_window: int | None = None,
) -> tuple[StrategyTuple, RefinerState]:
    """Feed one step (1-based) to the guard and return the strategy for the next step.

    The bucket is recorded every step; switching walks the ranking preselected at
    request start. `table` and `pclass` are only consulted to validate switches.
    """
    state.buckets.append(bucket)
    state._explored(state.active).observed.add(metrics)  # pyright:ignore[reportPrivateUsage]
    window = state.early_window if early_window is None else early_window
    if state.settled or step > window:
        return state.strategy, state

    state.ema = (
        float(metrics.accepted)
        if state.ema is None
        else state.alpha * metrics.accepted + (1 - state.alpha) * state.ema
    )
    if step <= state.warmup:
        return state.strategy, state

    threshold = state.rho * state.expected
    state.below_count = state.below_count + 1 if state.ema < threshold else 0
    LOGGER.debug(
        f"[step {step}] ema={state.ema:.3f} threshold={threshold:.3f} below={state.below_count}"
    )
    if state.below_count < state.hysteresis or state.bookkeeping_only:
        return state.strategy, state

    previous = state.strategy
    if state.transitions < state.max_transitions and state.active + 1 < len(state.candidates):
        state.active += 1
        state.transitions += 1
        kind = "switch"
    else:
        best = max(state.explored, key=lambda e: (e.observed.throughput, -e.rank))
        state.active = best.rank
        state.settled = True
        kind = "settle"
    if table is not None:
        state.strategy.validate(pclass, table.n_layers)
    state.events.append(RefinementEvent(step, kind, previous.label, state.strategy.label, state.ema))
    LOGGER.info(f"[step {step}] guard {kind}: {previous.label} -> {state.strategy.label}")
    state.ema = None
    state.below_count = 0
    return state.strategy, state


def _is_valid(strategy: StrategyTuple, pclass: PrecisionClass, n_layers: int) -> bool:
    try:
        strategy.validate(pclass, n_layers)
    except ConfigurationError:
        return False
    return True

