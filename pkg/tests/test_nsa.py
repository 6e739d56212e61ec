# SPDX-License-Identifier: MIT
# SPDX-FileCopyrightText: 2026 sparse-verify contributors
from dataclasses import replace
from itertools import permutations

import numpy as np
import pytest

from conftest import random_cache
from sparse_verify.const import WIDE_TOLERANCE
from sparse_verify.exceptions import ConfigurationError
from sparse_verify.nsa import (
    BranchPartial,
    CompressedCache,
    GateVector,
    KvCache,
    KvView,
    NsaConfig,
    SelectedIndexSet,
    attend_rows,
    branch_attend_compressed,
    branch_attend_selected,
    branch_attend_window,
    build_compressed_cache,
    dense_attend,
    forced_blocks,
    gated_combine,
    merge_partials,
    route_query,
    select_blocks,
    selection_scores,
)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"l": 8, "d": 16},  # stride larger than the block
        {"l_sel": 18},  # not a multiple of the stride
        {"n": 2},  # no room for the forced blocks
        {"n_q_heads": 3, "n_kv_heads": 2},
        {"w": 0},
    ],
)
def test_config_rejects_invalid_geometry(kwargs: dict[str, int]):
    base = {"l": 8, "d": 4, "l_sel": 16, "n": 4, "w": 32}
    with pytest.raises(ConfigurationError):
        NsaConfig(**{**base, **kwargs})


def test_block_counts(cfg: NsaConfig):
    assert cfg.compressed_block_count(7) == 0
    assert cfg.compressed_block_count(8) == 1
    assert cfg.compressed_block_count(16) == 3
    assert cfg.selection_block_count(0) == 0
    assert cfg.selection_block_count(16) == 1
    assert cfg.selection_block_count(17) == 2


def test_merge_partials_matches_single_pass():
    rng = np.random.default_rng(1)
    q = rng.standard_normal((2, 8))
    keys, values = rng.standard_normal((30, 8)), rng.standard_normal((30, 8))
    whole = attend_rows(q, keys, values, 0.3)
    split = merge_partials(attend_rows(q, keys[:11], values[:11], 0.3), attend_rows(q, keys[11:], values[11:], 0.3))
    np.testing.assert_allclose(split.normalized(), whole.normalized(), rtol=0, atol=WIDE_TOLERANCE)


def test_merge_with_empty_partial_is_identity():
    rng = np.random.default_rng(2)
    part = attend_rows(rng.standard_normal((2, 8)), rng.standard_normal((5, 8)), rng.standard_normal((5, 8)), 0.3)
    empty = BranchPartial.empty(2, 8)
    assert merge_partials(part, empty) is part
    assert merge_partials(empty, part) is part
    assert np.all(empty.normalized() == 0.0)


def test_merge_partials_is_order_independent():
    rng = np.random.default_rng(3)
    q = rng.standard_normal((2, 8))
    parts = [attend_rows(q, rng.standard_normal((t, 8)) * 3.0, rng.standard_normal((t, 8)), 0.3) for t in (4, 9, 6)]
    a, b, _ = parts
    forward, backward = merge_partials(a, b), merge_partials(b, a)
    np.testing.assert_array_equal(forward.out, backward.out)
    np.testing.assert_array_equal(forward.run_den, backward.run_den)
    reference = merge_partials(merge_partials(parts[0], parts[1]), parts[2]).normalized()
    for x, y, z in permutations(parts):
        merged = merge_partials(merge_partials(x, y), z)
        np.testing.assert_allclose(merged.normalized(), reference, rtol=0, atol=WIDE_TOLERANCE)


def test_forced_blocks(cfg: NsaConfig):
    assert forced_blocks(0, cfg) == frozenset()
    assert forced_blocks(10, cfg) == {0}
    assert forced_blocks(20, cfg) == {0, 1}
    assert forced_blocks(96, cfg) == {0, 4, 5}


def test_select_blocks_forced_first_and_ties_to_lower_id(cfg: NsaConfig):
    chosen = select_blocks(np.zeros(6), cfg.n, 96, cfg)
    assert chosen.indices == (0, 1, 4, 5)
    assert chosen.forced == {0, 4, 5}

    scores = np.array([0.0, 0.1, 0.9, 0.9, 0.0, 0.0])
    assert select_blocks(scores, cfg.n, 96, cfg).indices == (0, 2, 4, 5)


def test_select_blocks_short_context_takes_everything(cfg: NsaConfig):
    chosen = select_blocks(np.ones(2), cfg.n, 20, cfg)
    assert chosen.indices == (0, 1)
    chosen.validate(cfg, 20)


def test_select_blocks_explicit_forced(cfg: NsaConfig):
    scores = np.array([0.0, 0.5, 0.1, 0.2, 0.3, 0.4])
    chosen = select_blocks(scores, cfg.n, 96, cfg, forced=[2])
    assert chosen.indices == (1, 2, 4, 5)
    assert chosen.forced == {2}
    with pytest.raises(ConfigurationError):
        select_blocks(scores, 2, 96, cfg, forced=[0, 1, 2])


def test_index_set_invariants(cfg: NsaConfig):
    with pytest.raises(ConfigurationError):
        SelectedIndexSet(0, 0, (3, 1))
    with pytest.raises(ConfigurationError):
        SelectedIndexSet(0, 0, (1, 3), frozenset({0}))
    with pytest.raises(ConfigurationError):
        SelectedIndexSet(0, 0, (0, 1, 2, 3, 4)).validate(cfg, 200)
    with pytest.raises(ConfigurationError):
        SelectedIndexSet(0, 0, (0, 7)).validate(cfg, 40)


def test_selection_scores_are_probability_mass(cfg: NsaConfig):
    cache, cc = random_cache(cfg, 100, seed=4)
    view = KvView.committed(cache, 0, 99)
    q = np.random.default_rng(5).standard_normal((cfg.n_q_heads, cfg.d_head))
    scores = selection_scores(q, view.compressed(cc), view.length, cfg)
    assert scores.shape == (cfg.n_kv_heads, cfg.selection_block_count(100))
    # Every compression block lies inside the selection range, so the mass of
    # each query head is spread without loss.
    np.testing.assert_allclose(scores.sum(axis=1), cfg.group_size, rtol=1e-12)


def test_selection_scores_match_dense_oracle(cfg: NsaConfig):
    cache, cc = random_cache(cfg, 100, seed=6)
    view = KvView.committed(cache, 0, 99)
    q = np.random.default_rng(7).standard_normal((cfg.n_q_heads, cfg.d_head))
    scores = selection_scores(q, view.compressed(cc), view.length, cfg)

    keys = cache.keys(0).astype(np.float64)
    n_cmp = cfg.compressed_block_count(100)
    for g in range(cfg.n_kv_heads):
        pooled = [(keys[g, i * cfg.d : i * cfg.d + cfg.l] + cc.block_pos).mean(axis=0) for i in range(n_cmp)]
        mass = np.zeros(n_cmp)
        for h in range(g * cfg.group_size, (g + 1) * cfg.group_size):
            logits = np.array([q[h] @ k for k in pooled]) / np.sqrt(cfg.d_head)
            weights = np.exp(logits - logits.max())
            mass += weights / weights.sum()
        for j in range(cfg.selection_block_count(100)):
            expected = 0.0
            for i in range(n_cmp):
                lo, hi = max(i * cfg.d, j * cfg.l_sel), min(i * cfg.d + cfg.l, (j + 1) * cfg.l_sel)
                expected += mass[i] * max(hi - lo, 0) / cfg.l
            assert scores[g, j] == pytest.approx(expected, rel=1e-10, abs=1e-12)


def test_route_query_one_set_per_kv_head(cfg: NsaConfig):
    cache, cc = random_cache(cfg, 120, seed=6)
    view = KvView.committed(cache, 0, 119)
    q = np.random.default_rng(7).standard_normal((cfg.n_q_heads, cfg.d_head))
    sets = route_query(q, view.compressed(cc), view.length, cfg, query_id=3, layer=0)
    assert [s.kv_head for s in sets] == list(range(cfg.n_kv_heads))
    for s in sets:
        assert len(s) == cfg.n
        assert s.query_id == 3
        assert {0, 6, 7} <= set(s.indices)
        s.validate(cfg, view.length)


def test_incremental_compressed_cache_matches_rebuild(cfg: NsaConfig):
    rng = np.random.default_rng(8)
    cache = KvCache(cfg, 1, capacity=4)
    block_pos = rng.normal(0.0, 0.1, (cfg.l, cfg.d_head))
    incremental = CompressedCache(cfg, 0, block_pos)
    for _ in range(37):
        row = rng.standard_normal((cfg.n_kv_heads, cfg.d_head)).astype(np.float32)
        cache.append(0, row, row * 0.5)
        incremental.extend(cache)  # pyright:ignore[reportUnusedCallResult]
    rebuilt = build_compressed_cache(cache, cfg, 0, block_pos)
    assert incremental.block_count == cfg.compressed_block_count(37)
    np.testing.assert_array_equal(incremental.blocks().keys, rebuilt.blocks().keys)
    np.testing.assert_array_equal(incremental.blocks().values, rebuilt.blocks().values)


def test_draft_view_sees_same_history_as_committed_view(cfg: NsaConfig):
    rng = np.random.default_rng(9)
    shape = (cfg.n_kv_heads, 45, cfg.d_head)
    keys, values = rng.standard_normal(shape).astype(np.float32), rng.standard_normal(shape).astype(np.float32)
    block_pos = rng.normal(0.0, 0.1, (cfg.l, cfg.d_head))

    full = KvCache(cfg, 1)
    full.append(0, keys, values)
    partial = KvCache(cfg, 1)
    partial.append(0, keys[:, :40], values[:, :40])
    # Two unrelated draft rows are interleaved and masked out.
    draft_keys = np.concatenate([keys[:, 40:42], keys[:, :2] * 9, keys[:, 42:45]], axis=1)
    draft_values = np.concatenate([values[:, 40:42], values[:, :2] * 9, values[:, 42:45]], axis=1)
    mask_row = [True, True, False, False, True, True, True]

    committed = KvView.committed(full, 0, 44)
    drafted = KvView.from_tree(partial, 0, draft_keys, draft_values, mask_row, node_ids=[1, 2, 3, 4, 5, 6, 7])
    assert drafted.pos == committed.pos == 44
    assert drafted.tail_ids == (1, 2, 5, 6, 7)
    for start, stop in [(0, 45), (30, 43), (41, 45), (44, 60)]:
        for a, b in zip(committed.rows(1, start, stop), drafted.rows(1, start, stop)):
            np.testing.assert_array_equal(a, b)

    cmp_full = committed.compressed(build_compressed_cache(full, cfg, 0, block_pos))
    cmp_draft = drafted.compressed(build_compressed_cache(partial, cfg, 0, block_pos))
    assert cmp_draft.block_count == cfg.compressed_block_count(45)
    np.testing.assert_array_equal(cmp_full.keys, cmp_draft.keys)
    np.testing.assert_array_equal(cmp_full.values, cmp_draft.values)


def test_dense_limit(cfg: NsaConfig):
    wide = replace(cfg, w=64)
    cache, cc = random_cache(wide, 40, seed=10)
    view = KvView.committed(cache, 0, 39)
    q = np.random.default_rng(11).standard_normal((wide.n_q_heads, wide.d_head))
    sets = route_query(q, view.compressed(cc), view.length, wide)
    assert all(s.indices == (0, 1, 2) for s in sets)

    dense = dense_attend(q, view, wide)
    selected = branch_attend_selected(q, view, sets, wide)
    window = branch_attend_window(q, view, wide.w, wide)
    np.testing.assert_allclose(selected.normalized(), dense.normalized(), rtol=0, atol=WIDE_TOLERANCE)
    np.testing.assert_array_equal(window.normalized(), dense.normalized())


def test_unowned_blocks_in_schedule_contribute_nothing(cfg: NsaConfig):
    cache, cc = random_cache(cfg, 130, seed=12)
    view = KvView.committed(cache, 0, 129)
    q = np.random.default_rng(13).standard_normal((cfg.n_q_heads, cfg.d_head))
    sets = route_query(q, view.compressed(cc), view.length, cfg)
    alone = branch_attend_selected(q, view, sets, cfg)
    schedule = [tuple(range(cfg.selection_block_count(view.length)))] * cfg.n_kv_heads
    scheduled = branch_attend_selected(q, view, sets, cfg, schedule=schedule)
    np.testing.assert_array_equal(alone.out, scheduled.out)
    np.testing.assert_array_equal(alone.run_den, scheduled.run_den)


def test_compressed_branch_ignores_blocks_past_the_query(cfg: NsaConfig):
    cache, cc = random_cache(cfg, 64, seed=14)
    q = np.random.default_rng(15).standard_normal((cfg.n_q_heads, cfg.d_head))
    all_blocks = cc.blocks()
    early = branch_attend_compressed(q, all_blocks, 20, cfg)
    truncated = branch_attend_compressed(q, cc.blocks(cfg.compressed_block_count(20)), 20, cfg)
    np.testing.assert_array_equal(early.out, truncated.out)
    assert branch_attend_compressed(q, all_blocks, 5, cfg).is_empty


def test_single_compressed_block_returns_its_pooled_value(cfg: NsaConfig):
    cache, cc = random_cache(cfg, cfg.l, seed=20)
    q = np.random.default_rng(21).standard_normal((cfg.n_q_heads, cfg.d_head))
    part = branch_attend_compressed(q, cc.blocks(), cfg.l, cfg)
    pooled = cache.values(0).astype(np.float64).mean(axis=1)
    expected = np.repeat(pooled, cfg.group_size, axis=0)
    np.testing.assert_array_equal(part.normalized(), expected)


def test_window_covers_the_last_w_positions(cfg: NsaConfig):
    wide = replace(cfg, w=512)
    cache = KvCache(wide, 1, capacity=1001)
    keys = np.zeros((wide.n_kv_heads, 1001, wide.d_head), dtype=np.float32)
    # Zero keys give uniform weights; each value row holds its own position.
    values = np.broadcast_to(np.arange(1001, dtype=np.float32)[None, :, None], keys.shape).copy()
    cache.append(0, keys, values)
    q = np.random.default_rng(22).standard_normal((wide.n_q_heads, wide.d_head))
    part = branch_attend_window(q, KvView.committed(cache, 0, 1000), wide.w, wide)
    np.testing.assert_array_equal(part.run_den, np.full(wide.n_q_heads, 512.0))
    np.testing.assert_array_equal(part.normalized(), np.full((wide.n_q_heads, wide.d_head), (489 + 1000) / 2))


def test_gates():
    with pytest.raises(ConfigurationError):
        GateVector.constant(2, 1.5, 0.0, 0.0)
    gates = GateVector.from_logits(np.zeros((3, 4)))
    np.testing.assert_array_equal(gates.win, np.full(4, 0.5))


def seeded_partials(seed: int) -> list[BranchPartial]:
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((4, 8))
    return [attend_rows(q, rng.standard_normal((t, 8)), rng.standard_normal((t, 8)), 8**-0.5) for t in (3, 5, 7)]


def test_gated_combine_one_hot_window():
    p_cmp, p_slc, p_win = seeded_partials(16)
    out = gated_combine(p_cmp, p_slc, p_win, GateVector.constant(4, 0.0, 0.0, 1.0))
    np.testing.assert_array_equal(out, p_win.normalized())


def test_gated_combine_of_empty_partials_is_zero():
    empty = BranchPartial.empty(4, 8)
    out = gated_combine(empty, empty, empty, GateVector.constant(4, 0.9, 0.9, 0.9))
    np.testing.assert_array_equal(out, np.zeros((4, 8)))


def test_gated_combine_matches_scalar_oracle():
    partials = seeded_partials(17)
    gates = GateVector.from_logits(np.random.default_rng(18).standard_normal((3, 4)))
    out = gated_combine(*partials, gates)
    for h in range(4):
        for k in range(8):
            expected = sum(
                gate[h] * p.out[h, k] / p.run_den[h]
                for gate, p in zip((gates.cmp, gates.slc, gates.win), partials)
            )
            assert out[h, k] == pytest.approx(expected, rel=1e-12, abs=1e-12)
