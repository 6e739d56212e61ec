# SPDX-License-Identifier: MIT
# SPDX-FileCopyrightText: 2026 sparse-verify contributors
"""Reference semantics of NSA attention.

Three branches are evaluated per query: attention over compressed blocks, attention
over the Top-n selected raw blocks, and dense sliding-window attention. Each branch
keeps its own online-softmax state (`BranchPartial`) and the branches are combined
with per-head sigmoid gates.

Accumulation is done in float64 with a fixed left-to-right order, cached rows are
stored in float32. Selected blocks are evaluated one block at a time and merged in
ascending block order, so skipping a block is bit-identical to masking it with -inf.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass
import math
from typing import Any, Self

import numpy as np
from numpy.typing import NDArray

from .const import (
    DEFAULT_CMP_BLOCK,
    DEFAULT_CMP_STRIDE,
    DEFAULT_SEL_BLOCK,
    DEFAULT_SEL_COUNT,
    DEFAULT_TARGET_LAYERS,
    DEFAULT_WINDOW,
    FORCED_LOCAL_BLOCKS,
)
from .exceptions import ConfigurationError

__all__ = [
    "BranchPartial",
    "CompressedBlocks",
    "CompressedCache",
    "GateVector",
    "KvCache",
    "KvView",
    "NsaConfig",
    "RowVisibility",
    "SelectedIndexSet",
    "branch_attend_compressed",
    "branch_attend_selected",
    "branch_attend_window",
    "build_compressed_cache",
    "dense_attend",
    "gated_combine",
    "merge_partials",
    "route_query",
    "select_blocks",
    "selection_scores",
]

F32 = NDArray[np.float32]
F64 = NDArray[np.float64]


@dataclass(frozen=True, slots=True)
class NsaConfig:
    """All NSA hyperparameters of a model."""

    l: int = DEFAULT_CMP_BLOCK  # noqa: E741
    d: int = DEFAULT_CMP_STRIDE
    l_sel: int = DEFAULT_SEL_BLOCK
    n: int = DEFAULT_SEL_COUNT
    w: int = DEFAULT_WINDOW
    n_q_heads: int = 4
    n_kv_heads: int = 2
    d_head: int = 32
    n_layers: int = DEFAULT_TARGET_LAYERS

    def __post_init__(self) -> None:
        if self.l <= 0:
            raise ConfigurationError(f"compression block length must be positive, got {self.l}")
        if not 0 < self.d <= self.l:
            raise ConfigurationError(f"compression stride must be in (0, {self.l}], got {self.d}")
        if self.l_sel <= 0 or self.l_sel % self.d:
            raise ConfigurationError(
                f"selection block size must be a positive multiple of {self.d}, got {self.l_sel}"
            )
        if self.n < 1 + FORCED_LOCAL_BLOCKS:
            raise ConfigurationError(f"selected block count must be >= 3, got {self.n}")
        if self.w <= 0:
            raise ConfigurationError(f"window size must be positive, got {self.w}")
        if self.n_q_heads <= 0 or self.n_kv_heads <= 0 or self.n_q_heads % self.n_kv_heads:
            raise ConfigurationError(
                f"query heads ({self.n_q_heads}) must be a multiple of KV heads ({self.n_kv_heads})"
            )
        if self.d_head <= 0 or self.n_layers <= 0:
            raise ConfigurationError("head dimension and layer count must be positive")

    @property
    def group_size(self) -> int:
        """Query heads per KV head (GQA group size)."""
        return self.n_q_heads // self.n_kv_heads

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.d_head)

    def compressed_block_count(self, n_tokens: int) -> int:
        """Number of complete compression blocks over `n_tokens` tokens."""
        if n_tokens < self.l:
            return 0
        return (n_tokens - self.l) // self.d + 1

    def selection_block_count(self, visible_len: int) -> int:
        """Number of selection blocks intersecting [0, visible_len)."""
        return -(-visible_len // self.l_sel)

    def to_dict(self) -> dict[str, int]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Self:  # pyright:ignore[reportAny]
        return cls(**data)


class KvCache:
    """Committed key and value rows, per layer and KV head.

    Rows are appended for all layers at once when a token is committed. Draft rows
    never enter the cache, they are only read through a `KvView`.
    """

    def __init__(self, cfg: NsaConfig, n_layers: int | None = None, capacity: int = 256) -> None:
        super().__init__()
        self.cfg = cfg
        self.n_layers = n_layers if n_layers is not None else cfg.n_layers
        shape = (cfg.n_kv_heads, max(capacity, 1), cfg.d_head)
        self._keys = [np.zeros(shape, dtype=np.float32) for _ in range(self.n_layers)]
        self._values = [np.zeros(shape, dtype=np.float32) for _ in range(self.n_layers)]
        self._rows = [0] * self.n_layers

    @property
    def committed_len(self) -> int:
        """Tokens committed at every layer."""
        return min(self._rows)

    def rows(self, layer: int) -> int:
        return self._rows[layer]

    def keys(self, layer: int) -> F32:
        return self._keys[layer][:, : self._rows[layer], :]

    def values(self, layer: int) -> F32:
        return self._values[layer][:, : self._rows[layer], :]

    def append(self, layer: int, key: F32, value: F32) -> None:
        """Append rows of shape (n_kv_heads, t, d_head) or (n_kv_heads, d_head)."""
        if key.ndim == 2:
            key, value = key[:, None, :], value[:, None, :]
        count = key.shape[1]
        end = self._rows[layer] + count
        if end > self._keys[layer].shape[1]:
            capacity = max(end, 2 * self._keys[layer].shape[1])
            self._keys[layer] = _grow(self._keys[layer], capacity)
            self._values[layer] = _grow(self._values[layer], capacity)
        self._keys[layer][:, self._rows[layer] : end, :] = key
        self._values[layer][:, self._rows[layer] : end, :] = value
        self._rows[layer] = end


@dataclass(frozen=True, slots=True)
class CompressedBlocks:
    """Compressed key/value vectors of a prefix of compression blocks."""

    keys: F64  # (n_kv_heads, blocks, d_head)
    values: F64

    @property
    def block_count(self) -> int:
        return int(self.keys.shape[1])


class CompressedCache:
    """Compressed blocks of the committed rows of one layer.

    Block i pools tokens [i*d, i*d + l); blocks are appended as soon as their whole
    source range is committed.
    """

    def __init__(self, cfg: NsaConfig, layer: int, block_pos: F64 | None = None) -> None:
        super().__init__()
        self.cfg = cfg
        self.layer = layer
        self.block_pos: F64 = (
            block_pos if block_pos is not None else np.zeros((cfg.l, cfg.d_head), dtype=np.float64)
        )
        self._keys: list[F64] = []
        self._values: list[F64] = []

    @property
    def block_count(self) -> int:
        return len(self._keys)

    def block(self, block: int) -> tuple[F64, F64]:
        """Compressed key and value of one block, shaped (n_kv_heads, d_head)."""
        return self._keys[block], self._values[block]

    def source_range(self, block: int) -> tuple[int, int]:
        start = block * self.cfg.d
        return start, start + self.cfg.l

    def extend(self, kv: KvCache) -> int:
        """Pool every newly complete block of `kv`; return the number added."""
        target = self.cfg.compressed_block_count(kv.rows(self.layer))
        keys, values = kv.keys(self.layer), kv.values(self.layer)
        added = 0
        for block in range(self.block_count, target):
            start, stop = self.source_range(block)
            key, value = pool_block(keys[:, start:stop, :], values[:, start:stop, :], self.block_pos)
            self._keys.append(key)
            self._values.append(value)
            added += 1
        return added

    def blocks(self, count: int | None = None) -> CompressedBlocks:
        """Return the first `count` blocks (all by default)."""
        count = self.block_count if count is None else min(count, self.block_count)
        return _stack_blocks(self._keys[:count], self._values[:count], self.cfg)


def pool_block(keys: F32, values: F32, block_pos: F64) -> tuple[F64, F64]:
    """Mean-pool one block of rows (n_kv_heads, l, d_head); keys get a position embedding."""
    key = (keys.astype(np.float64) + block_pos[None, :, :]).mean(axis=1)
    value = values.astype(np.float64).mean(axis=1)
    return key, value


def build_compressed_cache(
    kv: KvCache, cfg: NsaConfig, layer: int, block_pos: F64 | None = None
) -> CompressedCache:
    """Build the compressed cache of `layer` from scratch."""
    cache = CompressedCache(cfg, layer, block_pos)
    cache.extend(kv)  # pyright:ignore[reportUnusedCallResult]
    return cache


@dataclass(frozen=True, slots=True)
class KvView:
    """Token history visible to one query at one layer.

    Positions [0, committed_len) come from the cache; the tail holds the draft rows
    admitted by the query's tree-mask row (its ancestors, then itself) at positions
    committed_len .. pos.
    """

    cache: KvCache
    layer: int
    committed_len: int
    tail_keys: F32  # (n_kv_heads, t, d_head)
    tail_values: F32
    tail_ids: tuple[int, ...] = ()

    @property
    def pos(self) -> int:
        """Absolute position of the query."""
        return self.committed_len + int(self.tail_keys.shape[1]) - 1

    @property
    def length(self) -> int:
        return self.pos + 1

    @classmethod
    def committed(cls, cache: KvCache, layer: int, pos: int) -> Self:
        """View of a query at `pos` whose whole history is committed."""
        empty = np.zeros((cache.cfg.n_kv_heads, 0, cache.cfg.d_head), dtype=np.float32)
        assert pos < cache.rows(layer), "query row is not committed"
        return cls(cache, layer, pos + 1, empty, empty)

    @classmethod
    def from_tree(
        cls,
        cache: KvCache,
        layer: int,
        draft_keys: F32,
        draft_values: F32,
        mask_row: Sequence[bool],
        node_ids: Sequence[int] = (),
    ) -> Self:
        """View of a draft query from its tree-mask row over draft rows (n_kv, γ, d).

        Draft rows must be ordered so that admitted rows appear in depth order.
        """
        admitted = [i for i, ok in enumerate(mask_row) if ok]
        ids = tuple(node_ids[i] for i in admitted) if node_ids else tuple(admitted)
        return cls(
            cache,
            layer,
            cache.rows(layer),
            draft_keys[:, admitted, :],
            draft_values[:, admitted, :],
            ids,
        )

    def rows(self, kv_head: int, start: int, stop: int) -> tuple[F64, F64]:
        """Key and value rows of positions [start, stop) clipped to the view."""
        stop = min(stop, self.length)
        start = max(start, 0)
        if stop <= start:
            empty = np.zeros((0, self.cache.cfg.d_head), dtype=np.float64)
            return empty, empty
        split = self.committed_len
        keys = self.cache.keys(self.layer)[kv_head]
        values = self.cache.values(self.layer)[kv_head]
        if stop <= split:
            k, v = keys[start:stop], values[start:stop]
        elif start >= split:
            k = self.tail_keys[kv_head, start - split : stop - split]
            v = self.tail_values[kv_head, start - split : stop - split]
        else:
            k = np.concatenate([keys[start:split], self.tail_keys[kv_head, : stop - split]])
            v = np.concatenate([values[start:split], self.tail_values[kv_head, : stop - split]])
        return k.astype(np.float64), v.astype(np.float64)

    def compressed(self, cc: CompressedCache) -> CompressedBlocks:
        """Compressed blocks whose whole source range lies at or before the query."""
        cfg = self.cache.cfg
        visible = cfg.compressed_block_count(self.length)
        cached = min(visible, cc.block_count, cfg.compressed_block_count(self.committed_len))
        keys = [cc.block(i)[0] for i in range(cached)]
        values = [cc.block(i)[1] for i in range(cached)]
        for block in range(cached, visible):
            start, stop = cc.source_range(block)
            raw = [self._raw_rows(g, start, stop) for g in range(cfg.n_kv_heads)]
            key, value = pool_block(
                np.stack([k for k, _ in raw]), np.stack([v for _, v in raw]), cc.block_pos
            )
            keys.append(key)
            values.append(value)
        return _stack_blocks(keys, values, cfg)

    def _raw_rows(self, kv_head: int, start: int, stop: int) -> tuple[F32, F32]:
        split = self.committed_len
        keys = self.cache.keys(self.layer)[kv_head]
        values = self.cache.values(self.layer)[kv_head]
        lo, hi = max(start - split, 0), max(stop - split, 0)
        k = np.concatenate([keys[start : min(stop, split)], self.tail_keys[kv_head, lo:hi]])
        v = np.concatenate([values[start : min(stop, split)], self.tail_values[kv_head, lo:hi]])
        return k, v


@dataclass(frozen=True, slots=True)
class SelectedIndexSet:
    """Sorted selection-block ids chosen for one query, layer and KV head."""

    query_id: int
    layer: int
    indices: tuple[int, ...]
    forced: frozenset[int] = frozenset()
    kv_head: int = 0

    def __post_init__(self) -> None:
        if any(a >= b for a, b in zip(self.indices, self.indices[1:])):
            raise ConfigurationError(f"selected indices must be strictly ascending: {self.indices}")
        if not self.forced <= set(self.indices):
            raise ConfigurationError(f"forced blocks {sorted(self.forced)} not in {self.indices}")

    def __len__(self) -> int:
        return len(self.indices)

    def validate(self, cfg: NsaConfig, visible_len: int) -> None:
        """Check the size and range invariants for a query seeing `visible_len` tokens."""
        if len(self.indices) > cfg.n:
            raise ConfigurationError(f"{len(self.indices)} blocks selected, at most {cfg.n} allowed")
        if self.indices and self.indices[-1] >= cfg.selection_block_count(visible_len):
            raise ConfigurationError(f"block {self.indices[-1]} is beyond the visible range")


@dataclass(frozen=True, slots=True)
class RowVisibility:
    """Causal bound (inclusive absolute position) and optional block ownership per KV head."""

    bound: int
    owned: tuple[frozenset[int], ...] | None = None


@dataclass(frozen=True, slots=True)
class BranchPartial:
    """Online-softmax state of one branch for every query head of a query."""

    out: F64  # (heads, d_head), unnormalized
    run_max: F64  # (heads,)
    run_den: F64  # (heads,)

    @classmethod
    def empty(cls, heads: int, d_head: int) -> BranchPartial:
        return cls(
            np.zeros((heads, d_head), dtype=np.float64),
            np.full(heads, -np.inf, dtype=np.float64),
            np.zeros(heads, dtype=np.float64),
        )

    @property
    def is_empty(self) -> bool:
        return not bool(np.any(self.run_den > 0))

    def normalized(self) -> F64:
        """Attention output per head; zero for heads without keys."""
        den = np.where(self.run_den > 0, self.run_den, 1.0)
        return np.where((self.run_den > 0)[:, None], self.out / den[:, None], 0.0)

    @classmethod
    def stack(cls, parts: Sequence[BranchPartial]) -> BranchPartial:
        """Concatenate per-KV-head partials along the head axis."""
        return cls(
            np.concatenate([p.out for p in parts]),
            np.concatenate([p.run_max for p in parts]),
            np.concatenate([p.run_den for p in parts]),
        )

    def heads(self, start: int, stop: int) -> BranchPartial:
        return BranchPartial(self.out[start:stop], self.run_max[start:stop], self.run_den[start:stop])


@dataclass(frozen=True, slots=True)
class GateVector:
    """Per-query-head branch gates."""

    cmp: F64
    slc: F64
    win: F64

    def __post_init__(self) -> None:
        for gate in (self.cmp, self.slc, self.win):
            if np.any(gate < 0.0) or np.any(gate > 1.0):
                raise ConfigurationError("gates must lie in [0, 1]")

    @classmethod
    def from_logits(cls, logits: F64) -> GateVector:
        """Sigmoid of gate logits shaped (3, heads)."""
        gates = 1.0 / (1.0 + np.exp(-logits.astype(np.float64)))
        return cls(gates[0], gates[1], gates[2])

    @classmethod
    def constant(cls, heads: int, cmp: float, slc: float, win: float) -> GateVector:
        return cls(np.full(heads, cmp), np.full(heads, slc), np.full(heads, win))


def attend_rows(q: F64, keys: F64, values: F64, scale: float) -> BranchPartial:
    """Single-chunk attention of query heads (h, d) over rows (t, d)."""
    heads, d_head = q.shape
    if keys.shape[0] == 0:
        return BranchPartial.empty(heads, d_head)
    logits = (q[:, None, :] * keys[None, :, :]).sum(axis=-1) * scale
    run_max = logits.max(axis=1)
    probs = np.exp(logits - run_max[:, None])
    out = (probs[:, :, None] * values[None, :, :]).sum(axis=1)
    return BranchPartial(out, run_max, probs.sum(axis=1))


def merge_partials(a: BranchPartial, b: BranchPartial) -> BranchPartial:
    """Merge two partials computed over disjoint key sets of the same query."""
    if b.is_empty:
        return a
    if a.is_empty:
        return b
    run_max = np.maximum(a.run_max, b.run_max)
    with np.errstate(invalid="ignore"):
        scale_a = np.where(a.run_den > 0, np.exp(a.run_max - run_max), 0.0)
        scale_b = np.where(b.run_den > 0, np.exp(b.run_max - run_max), 0.0)
    return BranchPartial(
        a.out * scale_a[:, None] + b.out * scale_b[:, None],
        run_max,
        a.run_den * scale_a + b.run_den * scale_b,
    )


def _group_heads(q: F64, cfg: NsaConfig, kv_head: int) -> F64:
    return q[kv_head * cfg.group_size : (kv_head + 1) * cfg.group_size]


def selection_scores(
    q: F64, blocks: CompressedBlocks, visible_len: int, cfg: NsaConfig
) -> F64:
    """Importance of every selection block intersecting [0, visible_len), per KV head.

    Softmax mass of each query head over the visible compressed keys is summed over
    the heads of a GQA group, then spread to selection blocks proportionally to the
    token overlap of each compression block with each selection block.
    """
    n_sel = cfg.selection_block_count(visible_len)
    scores = np.zeros((cfg.n_kv_heads, n_sel), dtype=np.float64)
    visible = min(cfg.compressed_block_count(visible_len), blocks.block_count)
    if visible == 0:
        return scores
    remap = _remap_matrix(visible, n_sel, cfg)
    for g in range(cfg.n_kv_heads):
        qg = _group_heads(q, cfg, g)
        logits = (qg[:, None, :] * blocks.keys[g, None, :visible, :]).sum(axis=-1) * cfg.scale
        probs = np.exp(logits - logits.max(axis=1)[:, None])
        probs = probs / probs.sum(axis=1)[:, None]
        scores[g] = (probs.sum(axis=0)[:, None] * remap).sum(axis=0)
    return scores


def _remap_matrix(n_cmp: int, n_sel: int, cfg: NsaConfig) -> F64:
    starts = np.arange(n_cmp, dtype=np.int64) * cfg.d
    ends = starts + cfg.l
    sel_starts = np.arange(n_sel, dtype=np.int64) * cfg.l_sel
    sel_ends = sel_starts + cfg.l_sel
    overlap = np.minimum(ends[:, None], sel_ends[None, :]) - np.maximum(
        starts[:, None], sel_starts[None, :]
    )
    return np.clip(overlap, 0, None).astype(np.float64) / cfg.l


def forced_blocks(visible_len: int, cfg: NsaConfig) -> frozenset[int]:
    """Block 0 plus the most recent selection blocks intersecting the visible range."""
    available = cfg.selection_block_count(visible_len)
    if available == 0:
        return frozenset()
    recent = range(max(available - FORCED_LOCAL_BLOCKS, 0), available)
    return frozenset({0, *recent})


def select_blocks(
    scores: F64,
    n: int,
    visible_len: int,
    cfg: NsaConfig,
    forced: Iterable[int] | None = None,
    *,
    query_id: int = 0,
    layer: int = 0,
    kv_head: int = 0,
) -> SelectedIndexSet:
    """Top-n selection: forced blocks first, then highest scores (lower id wins ties)."""
    available = min(cfg.selection_block_count(visible_len), len(scores))
    mandatory = frozenset(forced) if forced is not None else forced_blocks(visible_len, cfg)
    if len(mandatory) > n:
        raise ConfigurationError(f"{len(mandatory)} forced blocks do not fit into n={n}")
    budget = min(n, available)
    rest = sorted(
        (b for b in range(available) if b not in mandatory),
        key=lambda b: (-float(scores[b]), b),
    )
    chosen = set(mandatory) | set(rest[: max(budget - len(mandatory), 0)])
    return SelectedIndexSet(query_id, layer, tuple(sorted(chosen)), mandatory, kv_head)


def route_query(
    q: F64,
    blocks: CompressedBlocks,
    visible_len: int,
    cfg: NsaConfig,
    *,
    query_id: int = 0,
    layer: int = 0,
) -> tuple[SelectedIndexSet, ...]:
    """Index construction of one query: scores then Top-n, one set per KV head."""
    scores = selection_scores(q, blocks, visible_len, cfg)
    return tuple(
        select_blocks(scores[g], cfg.n, visible_len, cfg, query_id=query_id, layer=layer, kv_head=g)
        for g in range(cfg.n_kv_heads)
    )


def branch_attend_compressed(
    q: F64, blocks: CompressedBlocks, visible_len: int, cfg: NsaConfig
) -> BranchPartial:
    """Attention over the compressed blocks whose source range ends within visible_len."""
    visible = min(cfg.compressed_block_count(visible_len), blocks.block_count)
    return BranchPartial.stack(
        [
            attend_rows(
                _group_heads(q, cfg, g), blocks.keys[g, :visible], blocks.values[g, :visible], cfg.scale
            )
            for g in range(cfg.n_kv_heads)
        ]
    )


def branch_attend_selected(
    q: F64,
    view: KvView,
    idx: Sequence[SelectedIndexSet],
    cfg: NsaConfig,
    visibility: RowVisibility | None = None,
    schedule: Sequence[Sequence[int]] | None = None,
) -> BranchPartial:
    """Attention restricted to the tokens of the selected blocks.

    Blocks are visited in ascending order, one chunk each. `schedule` optionally
    replaces the visiting order per KV head (a merged group schedule); blocks not
    owned by the query contribute nothing, exactly as -inf logits would.
    """
    bound = visibility.bound if visibility is not None else view.pos
    parts: list[BranchPartial] = []
    for g in range(cfg.n_kv_heads):
        qg = _group_heads(q, cfg, g)
        own = frozenset(idx[g].indices)
        if visibility is not None and visibility.owned is not None:
            own = own & visibility.owned[g]
        order = schedule[g] if schedule is not None else idx[g].indices
        part = BranchPartial.empty(cfg.group_size, cfg.d_head)
        for block in order:
            if block not in own:
                continue
            start = block * cfg.l_sel
            keys, values = view.rows(g, start, min(start + cfg.l_sel, bound + 1))
            part = merge_partials(part, attend_rows(qg, keys, values, cfg.scale))
        parts.append(part)
    return BranchPartial.stack(parts)


def branch_attend_window(q: F64, view: KvView, w: int, cfg: NsaConfig) -> BranchPartial:
    """Dense attention over the last `w` positions of the view, self included."""
    start = max(0, view.pos - w + 1)
    parts: list[BranchPartial] = []
    for g in range(cfg.n_kv_heads):
        keys, values = view.rows(g, start, view.length)
        parts.append(attend_rows(_group_heads(q, cfg, g), keys, values, cfg.scale))
    return BranchPartial.stack(parts)


def dense_attend(q: F64, view: KvView, cfg: NsaConfig) -> BranchPartial:
    """Full causal attention over the whole view."""
    parts: list[BranchPartial] = []
    for g in range(cfg.n_kv_heads):
        keys, values = view.rows(g, 0, view.length)
        parts.append(attend_rows(_group_heads(q, cfg, g), keys, values, cfg.scale))
    return BranchPartial.stack(parts)


def gated_combine(
    p_cmp: BranchPartial, p_slc: BranchPartial, p_win: BranchPartial, g: GateVector
) -> F64:
    """Gated sum of the normalized branch outputs, shaped (heads, d_head)."""
    return (
        g.cmp[:, None] * p_cmp.normalized()
        + g.slc[:, None] * p_slc.normalized()
        + g.win[:, None] * p_win.normalized()
    )


def _grow(array: F32, capacity: int) -> F32:
    grown = np.zeros((array.shape[0], capacity, array.shape[2]), dtype=array.dtype)
    grown[:, : array.shape[1], :] = array
    return grown


def _stack_blocks(keys: list[F64], values: list[F64], cfg: NsaConfig) -> CompressedBlocks:
    if not keys:
        empty = np.zeros((cfg.n_kv_heads, 0, cfg.d_head), dtype=np.float64)
        return CompressedBlocks(empty, empty)
    return CompressedBlocks(np.stack(keys, axis=1), np.stack(values, axis=1))
