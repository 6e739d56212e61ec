# SPDX-License-Identifier: MIT
# SPDX-FileCopyrightText: 2026 sparse-verify contributors
"""Overlap-aware execution of adjacent verifier queries.

The flattened batch is cut into groups of at most C adjacent queries. The exact
variant loads the union of the members' selected blocks once and masks blocks a
member did not select; the approximate variant routes only a representative member
and shares its blocks with the whole group.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import asdict, dataclass, field, fields
from enum import StrEnum
from typing import ClassVar, TypeAlias

import numpy as np
from numpy.typing import NDArray
from typing_extensions import override

from .const import LAUNCHES_REFRESH, LOGGER
from .draft_tree import FlatBatch
from .exceptions import ConfigurationError
from .fusion import clamp_inherited_indices
from .nsa import (
    BranchPartial,
    CompressedBlocks,
    GateVector,
    KvView,
    NsaConfig,
    RowVisibility,
    SelectedIndexSet,
    branch_attend_compressed,
    branch_attend_selected,
    branch_attend_window,
    gated_combine,
    route_query,
)

__all__ = [
    "CoarseningMode",
    "GroupResult",
    "LoadStats",
    "MergedSchedule",
    "QueryGroup",
    "VerifierQuery",
    "adjacent_overlap",
    "attend_query",
    "cross_layer_overlap",
    "group_attend_approx",
    "group_attend_exact",
    "merged_schedule",
    "overlap_by_distance",
    "partition_groups",
    "representative_of",
]

IndexSets: TypeAlias = tuple[SelectedIndexSet, ...]
"""Index sets of one query at one layer, one per KV head."""


class CoarseningMode(StrEnum):
    EXACT = "exact"  # merged schedule with ownership masks
    APPROXIMATE = "approximate"  # representative query's indices shared

    @override
    @classmethod
    def _missing_(cls, value: object) -> CoarseningMode | None:
        aliases = {"approx": cls.APPROXIMATE, "e": cls.EXACT, "a": cls.APPROXIMATE}
        if isinstance(value, str):
            return aliases.get(value.lower())
        return None


@dataclass(frozen=True, slots=True)
class QueryGroup:
    """Contiguous slice of the verifier batch."""

    members: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.members:
            raise ConfigurationError("query group must not be empty")
        if any(b != a + 1 for a, b in zip(self.members, self.members[1:])):
            raise ConfigurationError(f"group members must be adjacent: {self.members}")

    def __len__(self) -> int:
        return len(self.members)


@dataclass(frozen=True, slots=True)
class MergedSchedule:
    """Deduplicated block union of a group (one KV head) with per-member ownership."""

    unique_blocks: tuple[int, ...]
    ownership: NDArray[np.bool_]  # (members, unique blocks)

    def owned(self, member: int) -> frozenset[int]:
        """Blocks selected by the `member`-th set the schedule was built from."""
        return frozenset(b for b, ok in zip(self.unique_blocks, self.ownership[member]) if ok)

    def masked(self, member: int) -> tuple[int, ...]:
        return tuple(b for b, ok in zip(self.unique_blocks, self.ownership[member]) if not ok)


@dataclass(slots=True)
class LoadStats:
    """Memory-traffic and launch accounting of one group or layer."""

    unique_block_loads: int = 0
    total_requested_loads: int = 0
    window_token_loads: int = 0
    launches: int = 0
    index_constructions: int = 0
    pairwise_overlap: list[int] = field(default_factory=list[int])

    CSV_FIELDS: ClassVar[tuple[str, ...]] = (
        "unique_block_loads",
        "total_requested_loads",
        "dedup_savings",
        "window_token_loads",
        "launches",
        "index_constructions",
        "mean_overlap",
    )

    def __post_init__(self) -> None:
        assert self.dedup_savings >= 0

    @property
    def dedup_savings(self) -> int:
        return self.total_requested_loads - self.unique_block_loads

    @property
    def mean_overlap(self) -> float:
        return float(np.mean(self.pairwise_overlap)) if self.pairwise_overlap else 0.0

    def merge(self, other: LoadStats) -> LoadStats:
        """Combine two groups of the same layer; launches are per layer."""
        return LoadStats(
            self.unique_block_loads + other.unique_block_loads,
            self.total_requested_loads + other.total_requested_loads,
            self.window_token_loads + other.window_token_loads,
            max(self.launches, other.launches),
            self.index_constructions + other.index_constructions,
            [*self.pairwise_overlap, *other.pairwise_overlap],
        )

    def as_row(self) -> dict[str, int | float]:
        data = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "pairwise_overlap"}  # pyright:ignore[reportAny]
        return {
            **data,  # pyright:ignore[reportAny]
            "dedup_savings": self.dedup_savings,
            "mean_overlap": round(self.mean_overlap, 6),
        }

    def to_dict(self) -> dict[str, object]:
        return asdict(self)


@dataclass(frozen=True, slots=True)
class VerifierQuery:
    """One verifier query at one layer, with everything its three branches read."""

    query_id: int
    q: NDArray[np.float64]  # (n_q_heads, d_head)
    view: KvView
    blocks: CompressedBlocks
    gates: GateVector

    @property
    def pos(self) -> int:
        return self.view.pos


@dataclass(slots=True)
class GroupResult:
    outputs: list[NDArray[np.float64]]
    stats: LoadStats
    index_sets: list[IndexSets]
    """Effective index sets of each member."""
    partials: list[tuple[BranchPartial, BranchPartial, BranchPartial]]
    """Compressed, selected and window partials of each member."""
    shared: IndexSets | None = None
    """Representative's index sets in the approximate variant."""


def partition_groups(batch: FlatBatch | int, C: int) -> list[QueryGroup]:  # noqa: N803
    """Consecutive slices of `C` queries; the last group may be smaller.

    `batch` is a flattened tree or just the number of queries in the pass.
    """
    if C < 1:
        raise ConfigurationError(f"coarsening factor must be >= 1, got {C}")
    gamma = batch if isinstance(batch, int) else batch.gamma
    return [QueryGroup(tuple(range(start, min(start + C, gamma)))) for start in range(0, gamma, C)]


def merged_schedule(index_sets: Sequence[SelectedIndexSet]) -> MergedSchedule:
    """Sorted union of the members' blocks with an ownership matrix."""
    unique = tuple(sorted({b for s in index_sets for b in s.indices}))
    ownership = np.array(
        [[b in set(s.indices) for b in unique] for s in index_sets], dtype=np.bool_
    ).reshape(len(index_sets), len(unique))
    return MergedSchedule(unique, ownership)


def attend_query(
    query: VerifierQuery,
    index_sets: IndexSets,
    cfg: NsaConfig,
    visibility: RowVisibility | None = None,
    schedule: Sequence[Sequence[int]] | None = None,
) -> tuple[NDArray[np.float64], tuple[BranchPartial, BranchPartial, BranchPartial]]:
    """Independent NSA execution of a single query."""
    p_cmp = branch_attend_compressed(query.q, query.blocks, query.view.length, cfg)
    p_slc = branch_attend_selected(query.q, query.view, index_sets, cfg, visibility, schedule)
    p_win = branch_attend_window(query.q, query.view, cfg.w, cfg)
    return gated_combine(p_cmp, p_slc, p_win, query.gates), (p_cmp, p_slc, p_win)


def route_members(
    queries: Sequence[VerifierQuery], cfg: NsaConfig, layer: int
) -> list[IndexSets]:
    return [
        route_query(m.q, m.blocks, m.view.length, cfg, query_id=m.query_id, layer=layer)
        for m in queries
    ]


def group_attend_exact(
    queries: Sequence[VerifierQuery],
    index_sets: Sequence[IndexSets],
    schedule: Sequence[MergedSchedule],
    cfg: NsaConfig,
    *,
    index_constructions: int | None = None,
    launches: int = LAUNCHES_REFRESH,
) -> GroupResult:
    """Run a group over its merged schedule, one schedule per KV head.

    Each unique block is visited once for the group and contributes only to the
    members that own it, so every member's output equals independent execution.
    """
    if len(index_sets) != len(queries) or len(schedule) != cfg.n_kv_heads:
        raise ConfigurationError("schedule does not match the group members")
    for g in range(cfg.n_kv_heads):
        expected = merged_schedule([sets[g] for sets in index_sets])
        if expected.unique_blocks != schedule[g].unique_blocks or not np.array_equal(
            expected.ownership, schedule[g].ownership
        ):
            raise ConfigurationError(f"schedule of KV head {g} was not built from this group")

    order = [s.unique_blocks for s in schedule]
    outputs: list[NDArray[np.float64]] = []
    partials: list[tuple[BranchPartial, BranchPartial, BranchPartial]] = []
    for member, query in enumerate(queries):
        visibility = RowVisibility(query.pos, tuple(s.owned(member) for s in schedule))
        out, parts = attend_query(query, index_sets[member], cfg, visibility, order)
        outputs.append(out)
        partials.append(parts)

    stats = LoadStats(
        unique_block_loads=sum(len(s.unique_blocks) for s in schedule),
        total_requested_loads=sum(len(s) for sets in index_sets for s in sets),
        window_token_loads=window_token_loads(queries, cfg),
        launches=launches,
        index_constructions=len(queries) if index_constructions is None else index_constructions,
        pairwise_overlap=_pair_overlaps(index_sets),
    )
    return GroupResult(outputs, stats, list(index_sets), partials)


def representative_of(queries: Sequence[VerifierQuery]) -> int:
    """Member with the largest position; later members win ties."""
    best = 0
    for member, query in enumerate(queries):
        if query.pos >= queries[best].pos:
            best = member
    return best


def group_attend_approx(
    queries: Sequence[VerifierQuery],
    cfg: NsaConfig,
    *,
    layer: int = 0,
    shared: IndexSets | None = None,
    launches: int = LAUNCHES_REFRESH,
) -> GroupResult:
    """Route only the representative and apply its blocks to every member.

    Shared blocks are clamped to each member's causal bound. Without `shared` the
    representative is routed here (one index construction); with `shared`, the
    sets are inherited and no index is constructed.
    """
    if not queries:
        raise ConfigurationError("query group must not be empty")
    rep = representative_of(queries)
    constructions = 0
    if shared is None:
        rep_query = queries[rep]
        shared = route_query(
            rep_query.q, rep_query.blocks, rep_query.view.length, cfg,
            query_id=rep_query.query_id, layer=layer,
        )
        constructions = 1

    outputs: list[NDArray[np.float64]] = []
    partials: list[tuple[BranchPartial, BranchPartial, BranchPartial]] = []
    effective: list[IndexSets] = []
    for query in queries:
        sets = tuple(
            clamp_inherited_indices(s, query.pos, cfg, query_id=query.query_id, layer=layer)[0]
            for s in shared
        )
        out, parts = attend_query(query, sets, cfg, RowVisibility(query.pos))
        outputs.append(out)
        partials.append(parts)
        effective.append(sets)

    stats = LoadStats(
        unique_block_loads=sum(len(s) for s in shared),
        total_requested_loads=sum(len(s) for sets in effective for s in sets),
        window_token_loads=window_token_loads(queries, cfg),
        launches=launches,
        index_constructions=constructions,
        pairwise_overlap=_pair_overlaps(effective),
    )
    LOGGER.debug(
        f"[layer {layer}] approx group {[q.query_id for q in queries]}: "
        f"representative {queries[rep].query_id}, {stats.unique_block_loads} block loads"
    )
    return GroupResult(outputs, stats, effective, partials, shared)


def window_token_loads(queries: Sequence[VerifierQuery], cfg: NsaConfig) -> int:
    """Distinct committed window rows plus distinct admitted draft rows of a group."""
    committed: set[int] = set()
    drafted: set[int] = set()
    for query in queries:
        start = max(0, query.pos - cfg.w + 1)
        split = query.view.committed_len
        committed.update(range(start, split))
        for offset, node_id in enumerate(query.view.tail_ids):
            if split + offset >= start:
                drafted.add(node_id)
    return len(committed) + len(drafted)


def adjacent_overlap(index_sets: Sequence[SelectedIndexSet]) -> list[int]:
    """|I_t ∩ I_{t-1}| for each adjacent pair of queries."""
    return [
        len(set(a.indices) & set(b.indices)) for a, b in zip(index_sets, index_sets[1:])
    ]


def overlap_by_distance(
    index_sets: Sequence[SelectedIndexSet], positions: Sequence[int]
) -> dict[int, float]:
    """Mean overlap ratio of query pairs as a function of their position distance."""
    ratios: dict[int, list[float]] = {}
    for i in range(len(index_sets)):
        for j in range(i + 1, len(index_sets)):
            ratio = _overlap_ratio(index_sets[i], index_sets[j])
            if ratio is not None:
                ratios.setdefault(abs(positions[i] - positions[j]), []).append(ratio)
    return _mean_by_distance(ratios)


def cross_layer_overlap(index_sets_by_layer: Sequence[Sequence[IndexSets]]) -> dict[int, float]:
    """Mean overlap ratio of one query's selections at two layers, by layer distance.

    `index_sets_by_layer[j][i]` holds the index sets of query i at layer j, one per
    KV head. Layers must be routed independently (no reuse) for the ratio to mean
    anything.
    """
    ratios: dict[int, list[float]] = {}
    for a in range(len(index_sets_by_layer)):
        for b in range(a + 1, len(index_sets_by_layer)):
            for sets_a, sets_b in zip(index_sets_by_layer[a], index_sets_by_layer[b], strict=True):
                for x, y in zip(sets_a, sets_b, strict=True):
                    ratio = _overlap_ratio(x, y)
                    if ratio is not None:
                        ratios.setdefault(b - a, []).append(ratio)
    return _mean_by_distance(ratios)


def _overlap_ratio(a: SelectedIndexSet, b: SelectedIndexSet) -> float | None:
    """|a ∩ b| / max(|a|, |b|), or None when either set is empty."""
    x, y = set(a.indices), set(b.indices)
    if not x or not y:
        return None
    return len(x & y) / max(len(x), len(y))


def _mean_by_distance(ratios: dict[int, list[float]]) -> dict[int, float]:
    return {delta: float(np.mean(values)) for delta, values in sorted(ratios.items())}


def _pair_overlaps(index_sets: Sequence[IndexSets]) -> list[int]:
    """Adjacent-pair overlap summed over KV heads."""
    return [
        sum(len(set(x.indices) & set(y.indices)) for x, y in zip(a, b))
        for a, b in zip(index_sets, index_sets[1:])
    ]
