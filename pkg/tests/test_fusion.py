# SPDX-License-Identifier: MIT
# SPDX-FileCopyrightText: 2026 sparse-verify contributors
from collections.abc import Sequence
from dataclasses import replace

import numpy as np
from numpy.typing import NDArray
import pytest

from conftest import TableDraft
from sparse_verify.config import synthetic_prompt
from sparse_verify.draft_tree import Traversal, expand_draft_tree, flatten_tree
from sparse_verify.exceptions import ConfigurationError
from sparse_verify.fusion import (
    LayerRole,
    LayerRolePlan,
    calibrate_reuse_schedule,
    clamp_inherited_indices,
    parse_reuse_schedule,
    resolve_layer_roles,
)
from sparse_verify.grouped import CoarseningMode, partition_groups
from sparse_verify.model import PassInput, ToyModelSpec, ToyTransformer
from sparse_verify.nsa import NsaConfig, SelectedIndexSet

WIDE_SCHEDULE = frozenset({3, 6, 7, 8, 12, 13, 14, 15})


def test_roles_and_sources_of_sixteen_layer_schedule():
    plan = resolve_layer_roles(WIDE_SCHEDULE, 16)
    assert [plan.source(j) for j in sorted(WIDE_SCHEDULE)] == [2, 5, 5, 5, 11, 11, 11, 11]
    assert all(plan.role(j) is LayerRole.REFRESH for j in range(16) if j not in WIDE_SCHEDULE)
    assert plan.total_launches == 8 * 2 + 8 * 1
    assert plan.vanilla_launches == 80
    assert plan.intermediate_writes == 8
    assert plan.vanilla_writes == 64


def test_all_refresh_plan():
    plan = resolve_layer_roles((), 8)
    assert plan.is_all_refresh
    assert plan.sources == (None,) * 8
    assert plan.total_launches == 16


@pytest.mark.parametrize("schedule", [{0}, {8}, {-1}])
def test_invalid_schedules(schedule: set[int]):
    with pytest.raises(ConfigurationError):
        resolve_layer_roles(schedule, 8)


@pytest.mark.parametrize(
    ("text", "expected"),
    [
        ("none", frozenset()),
        ("", frozenset()),
        ("alt", frozenset({1, 3, 5, 7})),
        ("1, 2,5", frozenset({1, 2, 5})),
        ("[3, 4]", frozenset({3, 4})),
    ],
)
def test_parse_reuse_schedule(text: str, expected: frozenset[int]):
    assert parse_reuse_schedule(text, 8) == expected


@pytest.mark.parametrize("text", ["1,x", "0,1", "9"])
def test_parse_reuse_schedule_rejects(text: str):
    with pytest.raises(ConfigurationError):
        parse_reuse_schedule(text, 8)


def test_clamp_drops_blocks_past_the_bound(cfg: NsaConfig):
    source = SelectedIndexSet(4, 1, (0, 2, 5, 6), frozenset({0, 5, 6}), kv_head=1)
    clamped, bound = clamp_inherited_indices(source, 85, cfg, query_id=7, layer=3)
    assert clamped.indices == (0, 2, 5)
    assert clamped.forced == {0, 5}
    assert (clamped.query_id, clamped.layer, clamped.kv_head) == (7, 3, 1)
    assert bound == 85


@pytest.fixture
def deep_target(cfg: NsaConfig) -> ToyTransformer:
    return ToyTransformer(
        ToyModelSpec(seed=3, n_layers=16, hidden=32, vocab=256, nsa=replace(cfg, n_layers=16), max_context=512)
    )


@pytest.mark.parametrize("schedule", [WIDE_SCHEDULE, frozenset(range(1, 16, 2))])
@pytest.mark.parametrize("mode", list(CoarseningMode))
def test_reuse_layers_use_source_indices(deep_target: ToyTransformer, schedule: frozenset[int], mode: CoarseningMode):
    plan = resolve_layer_roles(schedule, 16)
    session = deep_target.new_session(plan, mode, 2)
    session.prefill(synthetic_prompt(90, seed=1))
    session.step(5)  # pyright:ignore[reportUnusedCallResult]
    tree = expand_draft_tree(TableDraft(seed=4), 5, depth=3, width=2)
    batch = flatten_tree(tree, Traversal.DFS, session.committed_len)
    result = session.run(PassInput.from_batch(batch))

    for layer in range(16):
        source = plan.source(layer)
        stats = result.layer_stats[layer]
        if source is None:
            assert stats.launches == 2
            assert stats.index_constructions > 0
            continue
        assert stats.launches == 1
        assert stats.index_constructions == 0
        for i, sets in enumerate(result.index_sets[layer]):
            expected = [
                clamp_inherited_indices(s, batch.positions[i], deep_target.cfg)[0].indices
                for s in result.index_sets[source][i]
            ]
            assert [s.indices for s in sets] == expected


@pytest.mark.parametrize("C", [1, 3, 4])
def test_approx_pass_routes_once_per_group(tiny_target: ToyTransformer, C: int):  # noqa: N803
    session = tiny_target.new_session(mode=CoarseningMode.APPROXIMATE, coarsening=C)
    session.prefill(synthetic_prompt(60, seed=3))
    tree = expand_draft_tree(TableDraft(seed=6), 7, depth=3, width=2)
    batch = flatten_tree(tree, Traversal.BFS, session.committed_len)
    result = session.run(PassInput.from_batch(batch))
    groups = partition_groups(batch, C)
    assert len(groups) == -(-batch.gamma // C)
    for stats in result.layer_stats:
        assert stats.index_constructions == len(groups)


def test_empty_schedule_matches_independent_routing(deep_target: ToyTransformer):
    prompt = synthetic_prompt(90, seed=2)
    plain = deep_target.new_session()
    scheduled = deep_target.new_session(resolve_layer_roles((), 16), CoarseningMode.EXACT, 4)
    plain.prefill(prompt)
    scheduled.prefill(prompt)
    tree = expand_draft_tree(TableDraft(seed=5), prompt[-1] % 16, depth=2, width=3)
    batch = flatten_tree(tree, Traversal.BFS, plain.committed_len)
    a = plain.run(PassInput.from_batch(batch))
    b = scheduled.run(PassInput.from_batch(batch))
    np.testing.assert_array_equal(a.hidden, b.hidden)
    for layer in range(16):
        assert [[s.indices for s in sets] for sets in a.index_sets[layer]] == [
            [s.indices for s in sets] for sets in b.index_sets[layer]
        ]


def test_calibration_finds_inert_layers(tiny_target: ToyTransformer):
    # Layers 2 and 3 write nothing back to the residual stream, so reusing
    # indices there cannot change the hidden states.
    layers = [
        layer if j < 2 else replace(layer, wo=np.zeros_like(layer.wo), w2=np.zeros_like(layer.w2))
        for j, layer in enumerate(tiny_target.layers)
    ]
    model = ToyTransformer(tiny_target.spec, layers=layers, embed=tiny_target.embed, unembed=tiny_target.unembed)
    prompts = [synthetic_prompt(80, seed=s) for s in range(2)]
    result = calibrate_reuse_schedule(prompts, model, tolerance=0.0)
    assert {2, 3} <= result.reuse_set
    assert len(result.order) == len(result.deviations)
    assert all(d == 0.0 for d in result.deviations)


class OrthogonalEncoder:
    """Reusing layer j moves every hidden state by `sizes[j]` along its own axis."""

    def __init__(self, sizes: Sequence[float]) -> None:
        self.sizes = sizes

    @property
    def n_layers(self) -> int:
        return len(self.sizes)

    def encode(self, tokens: Sequence[int], plan: LayerRolePlan) -> NDArray[np.float32]:
        hidden = np.zeros((len(tokens), self.n_layers + 1), dtype=np.float32)
        hidden[:, 0] = 1.0
        for j, size in enumerate(self.sizes):
            if plan.role(j) is LayerRole.REUSE:
                hidden[:, j + 1] = size
        return hidden


def test_calibration_deviations_grow_with_the_schedule():
    result = calibrate_reuse_schedule([[1, 2, 3], [4, 5]], OrthogonalEncoder([0.0, 0.3, 0.1, 0.2, 0.4]), 0.4)
    assert result.order == [2, 3, 1]
    assert result.reuse_set == {1, 2, 3}
    assert result.deviations == pytest.approx([0.1, 0.05**0.5, 0.14**0.5], rel=1e-6)
    assert all(a <= b for a, b in zip(result.deviations, result.deviations[1:]))


def test_calibration_rejects_bad_input(tiny_target: ToyTransformer):
    with pytest.raises(ConfigurationError):
        calibrate_reuse_schedule([], tiny_target, 0.1)
    with pytest.raises(ConfigurationError):
        calibrate_reuse_schedule([[1, 2, 3]], tiny_target, -0.1)
