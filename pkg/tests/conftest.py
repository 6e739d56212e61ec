# SPDX-License-Identifier: MIT
# SPDX-FileCopyrightText: 2026 sparse-verify contributors
from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import replace
from typing import Any

import numpy as np
from numpy.typing import NDArray
import pytest
from typing_extensions import override

from sparse_verify.draft_tree import DraftModel, DraftTree
from sparse_verify.grouped import VerifierQuery
from sparse_verify.model import ToyModelSpec, ToyTransformer, log_softmax
from sparse_verify.nsa import CompressedCache, GateVector, KvCache, KvView, NsaConfig


@pytest.fixture
def cfg() -> NsaConfig:
    return NsaConfig(l=8, d=4, l_sel=16, n=4, w=32, n_q_heads=4, n_kv_heads=2, d_head=8, n_layers=1)


@pytest.fixture
def tiny_spec(cfg: NsaConfig) -> ToyModelSpec:
    return ToyModelSpec(
        seed=0,
        n_layers=4,
        hidden=32,
        vocab=256,
        nsa=replace(cfg, n_layers=4),
        max_context=512,
    )


@pytest.fixture
def tiny_target(tiny_spec: ToyModelSpec) -> ToyTransformer:
    return ToyTransformer(tiny_spec)


@pytest.fixture
def tiny_run() -> dict[str, Any]:  # pyright:ignore[reportExplicitAny]
    """Run config of a small model, as it would appear in a JSON file."""
    return {
        "target": {
            "seed": 0,
            "n_layers": 4,
            "hidden": 32,
            "vocab": 256,
            "max_context": 512,
            "nsa": {"l": 8, "d": 4, "l_sel": 16, "n": 4, "w": 32, "n_q_heads": 4, "n_kv_heads": 2, "d_head": 8},
        },
        "draft": {"kind": "truncated", "n_layers": 1},
        "prompts": {"count": 2, "length": 40, "seed": 3},
        "steps": 8,
        "strategy": {"depth": 3, "width": 2, "traversal": "bfs", "coarsening": 2, "mode": "exact"},
    }


def random_cache(cfg: NsaConfig, length: int, seed: int) -> tuple[KvCache, CompressedCache]:
    rng = np.random.default_rng(seed)
    cache = KvCache(cfg, 1)
    shape = (cfg.n_kv_heads, length, cfg.d_head)
    cache.append(0, rng.standard_normal(shape).astype(np.float32), rng.standard_normal(shape).astype(np.float32))
    block_pos = rng.normal(0.0, 0.1, (cfg.l, cfg.d_head))
    cc = CompressedCache(cfg, 0, block_pos)
    cc.extend(cache)  # pyright:ignore[reportUnusedCallResult]
    return cache, cc


def make_query(query_id: int, view: KvView, cc: CompressedCache, rng: np.random.Generator) -> VerifierQuery:
    cfg = view.cache.cfg
    return VerifierQuery(
        query_id,
        rng.standard_normal((cfg.n_q_heads, cfg.d_head)) * 2.0,
        view,
        view.compressed(cc),
        GateVector.from_logits(rng.standard_normal((3, cfg.n_q_heads))),
    )


@pytest.fixture
def committed_queries(cfg: NsaConfig) -> Callable[[int, int, int], list[VerifierQuery]]:
    """Factory of `count` adjacent queries whose history is fully committed."""

    def build(length: int, count: int, seed: int) -> list[VerifierQuery]:
        cache, cc = random_cache(cfg, length, seed)
        rng = np.random.default_rng(seed + 1000)
        return [
            make_query(i, KvView.committed(cache, 0, pos), cc, rng)
            for i, pos in enumerate(range(length - count, length))
        ]

    return build


class TableDraft(DraftModel):
    """Draft whose next-token distribution depends only on the current token."""

    def __init__(self, vocab: int = 16, seed: int = 0) -> None:
        super().__init__()
        rng = np.random.default_rng(seed)
        self.table: NDArray[np.float64] = np.stack(
            [log_softmax(rng.standard_normal(vocab) * 3.0) for _ in range(vocab)]
        )
        self.forwarded: list[list[int]] = []

    @override
    def root_pass(self, root_token: int) -> NDArray[np.float64]:
        return self.table[root_token]

    @override
    def forward_nodes(self, tree: DraftTree, node_ids: Sequence[int]) -> dict[int, NDArray[np.float64]]:
        self.forwarded.append(list(node_ids))
        return {n: self.table[tree.nodes[n].token] for n in node_ids}

    @override
    def commit(self, tree: DraftTree, accepted: Sequence[int]) -> None:
        pass


@pytest.fixture
def table_draft() -> TableDraft:
    return TableDraft()
