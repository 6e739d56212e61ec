# SPDX-License-Identifier: MIT
# SPDX-FileCopyrightText: 2026 sparse-verify contributors
"""Seeded toy transformers and their forward passes.

A forward pass processes a batch of query tokens against the committed cache. Each
query may additionally see the rows of some uncommitted nodes (its draft-tree
ancestors); those rows are read through a `KvView` and never enter the cache until
`DecodeSession.commit_rows`.

Every projection is evaluated per query on a 1-D vector with a fixed reduction order,
so a token's hidden state does not depend on which batch it was computed in.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field, replace
from enum import StrEnum
from typing import Any, Self

import numpy as np
from numpy.typing import NDArray
from typing_extensions import override

from .const import (
    DEFAULT_DRAFT_LAYERS,
    DEFAULT_HIDDEN,
    DEFAULT_MAX_CONTEXT,
    DEFAULT_TARGET_LAYERS,
    DEFAULT_VOCAB,
    LAUNCHES_REFRESH,
    LAUNCHES_REUSE,
    LOGGER,
)
from .draft_tree import ROOT_ID, DraftModel, DraftTree, FlatBatch
from .exceptions import ConfigurationError, ContextOverflowError
from .fusion import LayerRole, LayerRolePlan, clamp_inherited_indices, resolve_layer_roles
from .grouped import (
    CoarseningMode,
    GroupResult,
    IndexSets,
    LoadStats,
    VerifierQuery,
    group_attend_approx,
    group_attend_exact,
    merged_schedule,
    partition_groups,
    route_members,
)
from .nsa import BranchPartial, CompressedCache, GateVector, KvCache, KvView, NsaConfig, dense_attend

__all__ = [
    "AttentionKind",
    "DecodeSession",
    "ModelRole",
    "PassInput",
    "PassResult",
    "SessionDraft",
    "ToyModelSpec",
    "ToyTransformer",
    "log_softmax",
]

F32 = NDArray[np.float32]
F64 = NDArray[np.float64]
NodeRows = list[tuple[F32, F32]]
"""Key and value rows (n_kv_heads, d_head) of one node, per layer."""

RMS_EPS = np.float32(1e-6)
RESIDUAL_SCALE = np.float32(0.5)


class AttentionKind(StrEnum):
    NSA = "nsa"
    DENSE = "dense"


class ModelRole(StrEnum):
    TARGET = "target"
    DRAFT = "draft"


@dataclass(frozen=True, slots=True)
class ToyModelSpec:
    seed: int = 0
    n_layers: int = DEFAULT_TARGET_LAYERS
    hidden: int = DEFAULT_HIDDEN
    vocab: int = DEFAULT_VOCAB
    nsa: NsaConfig = field(default_factory=NsaConfig)
    role: ModelRole = ModelRole.TARGET
    attention: AttentionKind = AttentionKind.NSA
    truncated_from: int | None = None
    """Depth of the target this draft was truncated from; None for independent models."""
    max_context: int = DEFAULT_MAX_CONTEXT
    ffn_mult: int = 2

    def __post_init__(self) -> None:
        if self.nsa.n_layers != self.n_layers:
            raise ConfigurationError(
                f"NSA config has {self.nsa.n_layers} layers, the model {self.n_layers}"
            )
        if self.role is ModelRole.TARGET and self.attention is not AttentionKind.NSA:
            raise ConfigurationError("target models use NSA attention")
        if self.hidden <= 0 or self.vocab <= 0 or self.max_context <= 0 or self.ffn_mult <= 0:
            raise ConfigurationError("hidden, vocab, context and ffn sizes must be positive")

    @classmethod
    def draft_for(cls, target: ToyModelSpec, seed: int, n_layers: int = DEFAULT_DRAFT_LAYERS) -> Self:
        """Independent dense-attention draft sharing the target's vocabulary."""
        return cls(
            seed=seed,
            n_layers=n_layers,
            hidden=target.hidden,
            vocab=target.vocab,
            nsa=replace(target.nsa, n_layers=n_layers),
            role=ModelRole.DRAFT,
            attention=AttentionKind.DENSE,
            max_context=target.max_context,
            ffn_mult=target.ffn_mult,
        )

    def to_dict(self) -> dict[str, Any]:  # pyright:ignore[reportExplicitAny]
        data = asdict(self)
        data["role"] = str(self.role)
        data["attention"] = str(self.attention)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Self:  # pyright:ignore[reportExplicitAny]
        values = dict(data)
        values["nsa"] = NsaConfig.from_dict(values["nsa"])  # pyright:ignore[reportAny]
        values["role"] = ModelRole(values.get("role", ModelRole.TARGET))
        values["attention"] = AttentionKind(values.get("attention", AttentionKind.NSA))
        return cls(**values)  # pyright:ignore[reportAny]


@dataclass(frozen=True, slots=True)
class LayerWeights:
    wq: F32
    wk: F32
    wv: F32
    wo: F32
    wg: F32
    """Gate projection of the query to 3 x n_q_heads logits."""
    w1: F32
    w2: F32
    block_pos: F64
    """Intra-block position embedding added to pooled compressed keys."""


@dataclass(frozen=True, slots=True)
class PassInput:
    """Query tokens of one forward pass and the uncommitted nodes each query sees."""

    node_ids: tuple[int, ...]
    tokens: tuple[int, ...]
    positions: tuple[int, ...]
    ancestors: tuple[tuple[int, ...], ...]
    """Uncommitted ancestor node ids of each query, shallowest first."""

    @classmethod
    def single(cls, token: int, position: int) -> Self:
        return cls((ROOT_ID,), (token,), (position,), ((),))

    @classmethod
    def from_batch(cls, batch: FlatBatch) -> Self:
        return cls(
            batch.node_ids,
            batch.tokens,
            batch.positions,
            tuple(tuple(batch.node_ids[j] for j in batch.ancestors(i)) for i in range(batch.gamma)),
        )


@dataclass(slots=True)
class PassResult:
    node_ids: tuple[int, ...]
    hidden: F32  # (queries, hidden), final normalized hidden states
    logits: F32  # (queries, vocab)
    rows: dict[int, NodeRows]
    layer_stats: list[LoadStats] = field(default_factory=list[LoadStats])
    index_sets: list[list[IndexSets]] = field(default_factory=list[list[IndexSets]])
    """Effective index sets per layer and query."""
    partials: list[list[tuple[BranchPartial, BranchPartial, BranchPartial]]] = field(
        default_factory=list[list[tuple[BranchPartial, BranchPartial, BranchPartial]]]
    )

    def argmax(self) -> dict[int, int]:
        return {
            node_id: int(np.argmax(self.logits[i])) for i, node_id in enumerate(self.node_ids)
        }


class ToyTransformer:
    """Residual transformer with RMS norm, sinusoidal positions and a tanh MLP."""

    def __init__(
        self,
        spec: ToyModelSpec,
        *,
        layers: Sequence[LayerWeights] | None = None,
        embed: F32 | None = None,
        unembed: F32 | None = None,
    ) -> None:
        super().__init__()
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        cfg = spec.nsa
        self.embed: F32 = embed if embed is not None else _normal(rng, (spec.vocab, spec.hidden), 1.0)
        self.layers: list[LayerWeights] = (
            list(layers) if layers is not None else [self._init_layer(rng) for _ in range(spec.n_layers)]
        )
        self.unembed: F32 = (
            unembed if unembed is not None else _normal(rng, (spec.hidden, spec.vocab), spec.hidden**-0.5)
        )
        self._positions = _sinusoids(spec.max_context, spec.hidden)
        assert len(self.layers) == spec.n_layers
        assert cfg.n_q_heads * cfg.d_head > 0

    def _init_layer(self, rng: np.random.Generator) -> LayerWeights:
        spec, cfg = self.spec, self.spec.nsa
        q_dim, kv_dim, ffn = cfg.n_q_heads * cfg.d_head, cfg.n_kv_heads * cfg.d_head, spec.ffn_mult * spec.hidden
        return LayerWeights(
            wq=_normal(rng, (spec.hidden, q_dim), spec.hidden**-0.5),
            wk=_normal(rng, (spec.hidden, kv_dim), spec.hidden**-0.5),
            wv=_normal(rng, (spec.hidden, kv_dim), spec.hidden**-0.5),
            wo=_normal(rng, (q_dim, spec.hidden), q_dim**-0.5),
            wg=_normal(rng, (q_dim, 3 * cfg.n_q_heads), q_dim**-0.5),
            w1=_normal(rng, (spec.hidden, ffn), spec.hidden**-0.5),
            w2=_normal(rng, (ffn, spec.hidden), ffn**-0.5),
            block_pos=rng.normal(0.0, 0.1, (cfg.l, cfg.d_head)).astype(np.float64),
        )

    @property
    def cfg(self) -> NsaConfig:
        return self.spec.nsa

    @property
    def n_layers(self) -> int:
        return self.spec.n_layers

    def truncated(self, depth: int) -> ToyTransformer:
        """Draft made of the first `depth` layers of this model, weights shared."""
        if not 1 <= depth <= self.n_layers:
            raise ConfigurationError(f"truncation depth must be in 1..{self.n_layers}, got {depth}")
        spec = replace(
            self.spec,
            n_layers=depth,
            nsa=replace(self.spec.nsa, n_layers=depth),
            role=ModelRole.DRAFT,
            truncated_from=self.spec.n_layers,
        )
        return ToyTransformer(spec, layers=self.layers[:depth], embed=self.embed, unembed=self.unembed)

    def new_session(
        self,
        plan: LayerRolePlan | None = None,
        mode: CoarseningMode = CoarseningMode.EXACT,
        coarsening: int = 1,
    ) -> DecodeSession:
        return DecodeSession(self, plan, mode, coarsening)

    def encode(self, tokens: Sequence[int], plan: LayerRolePlan) -> F32:
        """Final hidden states of `tokens` processed one at a time under `plan`."""
        session = self.new_session(plan)
        return np.stack([session.step(token).hidden[0] for token in tokens])

    def layer_selections(self, tokens: Sequence[int]) -> list[list[IndexSets]]:
        """Index sets of every token at every layer, each layer routing on its own.

        Entry `[j][i]` belongs to token i at layer j. Empty for dense attention.
        """
        if self.spec.attention is AttentionKind.DENSE:
            return []
        session = self.new_session()
        by_layer: list[list[IndexSets]] = [[] for _ in range(self.n_layers)]
        for token in tokens:
            for layer, sets in enumerate(session.step(token).index_sets):
                by_layer[layer].extend(sets)
        return by_layer

    def forward(self, session: DecodeSession, inputs: PassInput, known: Mapping[int, NodeRows]) -> PassResult:
        """Run one pass; `known` holds rows of uncommitted nodes from earlier passes."""
        cfg, spec = self.cfg, self.spec
        count = len(inputs.node_ids)
        x = [self.embed[tok] + self._positions[pos] for tok, pos in zip(inputs.tokens, inputs.positions)]
        rows: dict[int, NodeRows] = {node_id: [] for node_id in inputs.node_ids}
        result = PassResult(inputs.node_ids, np.zeros((0,), np.float32), np.zeros((0,), np.float32), rows)
        shared: list[list[IndexSets | None]] = []

        for layer, weights in enumerate(self.layers):
            normed = [_rms_norm(h) for h in x]
            qs = [_linear(h, weights.wq).reshape(cfg.n_q_heads, cfg.d_head) for h in normed]
            for node_id, h in zip(inputs.node_ids, normed):
                k = _linear(h, weights.wk).reshape(cfg.n_kv_heads, cfg.d_head)
                v = _linear(h, weights.wv).reshape(cfg.n_kv_heads, cfg.d_head)
                rows[node_id].append((k, v))

            views = [
                self._view(session, layer, node_id, ancestors, rows, known)
                for node_id, ancestors in zip(inputs.node_ids, inputs.ancestors)
            ]
            if spec.attention is AttentionKind.DENSE:
                attn = [dense_attend(q.astype(np.float64), view, cfg).normalized() for q, view in zip(qs, views)]
            else:
                queries = [
                    VerifierQuery(
                        i,
                        q.astype(np.float64),
                        view,
                        view.compressed(session.compressed[layer]),
                        GateVector.from_logits(_linear(q.reshape(-1), weights.wg).reshape(3, cfg.n_q_heads).astype(np.float64)),
                    )
                    for i, (q, view) in enumerate(zip(qs, views))
                ]
                attn, layer_shared = self._attend_layer(session, layer, queries, result, shared)
                shared.append(layer_shared)

            for i in range(count):
                out = _linear(attn[i].astype(np.float32).reshape(-1), weights.wo)
                x[i] = x[i] + RESIDUAL_SCALE * out
                mlp = _linear(np.tanh(_linear(_rms_norm(x[i]), weights.w1)), weights.w2)
                x[i] = x[i] + RESIDUAL_SCALE * mlp

        hidden = np.stack([_rms_norm(h) for h in x])
        result.hidden = hidden
        result.logits = np.stack([_linear(h, self.unembed) for h in hidden])
        return result

    def _view(
        self,
        session: DecodeSession,
        layer: int,
        node_id: int,
        ancestors: Sequence[int],
        rows: Mapping[int, NodeRows],
        known: Mapping[int, NodeRows],
    ) -> KvView:
        chain = [rows[a][layer] if a in rows else known[a][layer] for a in ancestors]
        chain.append(rows[node_id][layer])
        keys = np.stack([k for k, _ in chain], axis=1)
        values = np.stack([v for _, v in chain], axis=1)
        return KvView(session.cache, layer, session.cache.rows(layer), keys, values, (*ancestors, node_id))

    def _attend_layer(
        self,
        session: DecodeSession,
        layer: int,
        queries: Sequence[VerifierQuery],
        result: PassResult,
        shared: Sequence[Sequence[IndexSets | None]],
    ) -> tuple[list[F64], list[IndexSets | None]]:
        cfg, plan = self.cfg, session.plan
        role, source = plan.role(layer), plan.source(layer)
        launches = LAUNCHES_REUSE if role is LayerRole.REUSE else LAUNCHES_REFRESH
        outputs: list[F64] = []
        layer_sets: list[IndexSets] = []
        layer_parts: list[tuple[BranchPartial, BranchPartial, BranchPartial]] = []
        layer_shared: list[IndexSets | None] = []
        stats: LoadStats | None = None

        for g, slot in enumerate(partition_groups(len(queries), session.coarsening)):
            members = [queries[i] for i in slot.members]
            group: GroupResult
            if session.mode is CoarseningMode.APPROXIMATE:
                inherited = shared[source][g] if source is not None else None
                group = group_attend_approx(
                    members, cfg, layer=layer, shared=inherited, launches=launches
                )
            else:
                if source is None:
                    sets = route_members(members, cfg, layer)
                    constructions = len(members)
                else:
                    sets = [
                        tuple(
                            clamp_inherited_indices(s, m.pos, cfg, query_id=m.query_id, layer=layer)[0]
                            for s in result.index_sets[source][m.query_id]
                        )
                        for m in members
                    ]
                    constructions = 0
                schedule = [merged_schedule([s[h] for s in sets]) for h in range(cfg.n_kv_heads)]
                group = group_attend_exact(
                    members, sets, schedule, cfg, index_constructions=constructions, launches=launches
                )
            outputs.extend(group.outputs)
            layer_sets.extend(group.index_sets)
            layer_parts.extend(group.partials)
            layer_shared.append(group.shared)
            stats = group.stats if stats is None else stats.merge(group.stats)

        assert stats is not None
        result.layer_stats.append(stats)
        result.index_sets.append(layer_sets)
        result.partials.append(layer_parts)
        return outputs, layer_shared


class DecodeSession:
    """Committed state of one request on one model."""

    def __init__(
        self,
        model: ToyTransformer,
        plan: LayerRolePlan | None = None,
        mode: CoarseningMode = CoarseningMode.EXACT,
        coarsening: int = 1,
    ) -> None:
        super().__init__()
        self.model = model
        self.plan = plan if plan is not None else resolve_layer_roles((), model.n_layers)
        self.mode = mode
        self.coarsening = coarsening
        self.cache = KvCache(model.cfg, model.n_layers)
        self.compressed = [
            CompressedCache(model.cfg, layer, weights.block_pos)
            for layer, weights in enumerate(model.layers)
        ]

    @property
    def committed_len(self) -> int:
        return self.cache.committed_len

    def configure(self, plan: LayerRolePlan, mode: CoarseningMode, coarsening: int) -> None:
        """Change the verification settings; committed state is kept."""
        if plan.n_layers != self.model.n_layers:
            raise ConfigurationError("layer plan does not match the model depth")
        if coarsening < 1:
            raise ConfigurationError(f"coarsening factor must be >= 1, got {coarsening}")
        self.plan, self.mode, self.coarsening = plan, mode, coarsening

    def run(self, inputs: PassInput, known: Mapping[int, NodeRows] | None = None) -> PassResult:
        deepest = max((len(a) for a in inputs.ancestors), default=0)
        if self.committed_len + deepest + 1 > self.model.spec.max_context:
            raise ContextOverflowError(
                f"context of {self.committed_len + deepest + 1} tokens exceeds "
                f"{self.model.spec.max_context}"
            )
        return self.model.forward(self, inputs, known or {})

    def step(self, token: int) -> PassResult:
        """Process one token at the next position and commit its rows."""
        result = self.run(PassInput.single(token, self.committed_len))
        self.commit_rows([result.rows[ROOT_ID]])
        return result

    def prefill(self, tokens: Sequence[int]) -> None:
        for token in tokens:
            self.step(token)  # pyright:ignore[reportUnusedCallResult]
        LOGGER.debug(f"[{self.model.spec.role}] prefilled {len(tokens)} tokens")

    def commit(self, result: PassResult, node_ids: Sequence[int]) -> None:
        self.commit_rows([result.rows[n] for n in node_ids])

    def commit_rows(self, nodes: Sequence[NodeRows]) -> None:
        """Append the rows of consecutive tokens to every layer."""
        if not nodes:
            return
        for layer in range(self.model.n_layers):
            keys = np.stack([node[layer][0] for node in nodes], axis=1)
            values = np.stack([node[layer][1] for node in nodes], axis=1)
            self.cache.append(layer, keys, values)
            self.compressed[layer].extend(self.cache)  # pyright:ignore[reportUnusedCallResult]


class SessionDraft(DraftModel):
    """Draft model backed by a decode session of a toy transformer."""

    def __init__(self, model: ToyTransformer) -> None:
        super().__init__()
        self.model = model
        self.session = model.new_session()
        self._rows: dict[int, NodeRows] = {}

    def prefill(self, tokens: Sequence[int]) -> None:
        self.session.prefill(tokens)

    @override
    def root_pass(self, root_token: int) -> F64:
        self._rows.clear()
        return log_softmax(self.session.step(root_token).logits[0])

    @override
    def forward_nodes(self, tree: DraftTree, node_ids: Sequence[int]) -> dict[int, F64]:
        base = self.session.committed_len
        nodes = [tree.nodes[n] for n in node_ids]
        inputs = PassInput(
            tuple(node_ids),
            tuple(n.token for n in nodes),
            tuple(base - 1 + n.depth for n in nodes),
            tuple(tuple(p.node_id for p in tree.path(n.node_id)[:-1]) for n in nodes),
        )
        result = self.session.run(inputs, self._rows)
        self._rows.update(result.rows)
        return {n: log_softmax(result.logits[i]) for i, n in enumerate(node_ids)}

    @override
    def commit(self, tree: DraftTree, accepted: Sequence[int]) -> None:
        self.session.commit_rows([self._rows[n] for n in accepted])
        self._rows.clear()


def log_softmax(logits: NDArray[np.floating[Any]]) -> F64:  # pyright:ignore[reportExplicitAny]
    wide = logits.astype(np.float64)
    shifted = wide - wide.max()
    return shifted - np.log(np.exp(shifted).sum())


def _linear(x: F32, w: F32) -> F32:
    """x @ w for a 1-D x, reduced row by row in a fixed order."""
    return (x[:, None] * w).sum(axis=0, dtype=np.float32)


def _rms_norm(x: F32) -> F32:
    return (x / np.sqrt((x * x).mean(dtype=np.float32) + RMS_EPS)).astype(np.float32)


def _normal(rng: np.random.Generator, shape: tuple[int, ...], scale: float) -> F32:
    return (rng.standard_normal(shape) * scale).astype(np.float32)


def _sinusoids(length: int, dim: int) -> F32:
    positions = np.arange(length, dtype=np.float64)[:, None]
    freqs = np.exp(-np.log(10000.0) * np.arange(0, dim, 2, dtype=np.float64) / dim)
    table = np.zeros((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(positions * freqs)
    table[:, 1::2] = np.cos(positions * freqs[: dim // 2])
    return table.astype(np.float32)
