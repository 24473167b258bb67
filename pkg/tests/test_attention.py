import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trajattn.attention import (
    AttentionWeights,
    BlockWeights,
    ConditionEmbedding,
    dit_block,
    masked_attention,
    self_attention_3d,
)
from trajattn.errors import AllBlockedRow, ShapeMismatch
from trajattn.lattice import TokenLattice
from trajattn.masking import (
    AttentionMask,
    ConditionLayout,
    build_cross_mask,
    build_self_mask,
)
from trajattn.rope import RopeLayout, build_3d_rope

from oracles import naive_attention


def random_case(seed, L, K, heads, head_dim=16):
    rng = np.random.default_rng(seed)
    D = heads * head_dim
    w = AttentionWeights.random(rng, D, qk_align=0.5)
    return rng.standard_normal((L, D)), rng.standard_normal((K, D)), w


def random_mask(rng, L, K):
    blocked = rng.random((L, K)) < 0.4
    blocked[np.arange(L), rng.integers(0, K, L)] = False  # keep one passing key per row
    return AttentionMask(np.arange(L), np.arange(K), blocked)


def blocked_pairs(mask):
    return {tuple(p) for p in mask.blocked_pairs().tolist()}


def test_all_pass_mask_matches_no_mask_bitwise():
    x, kv, w = random_case(0, 6, 5, 2)
    a = masked_attention(x, kv, w, 2)
    b = masked_attention(x, kv, w, 2, AttentionMask.all_pass(6, 5))
    assert np.array_equal(a, b)


def test_single_passing_key_copies_value_row():
    x, kv, w = random_case(1, 4, 4, 1)
    mask = AttentionMask(np.arange(4), np.arange(4), ~np.eye(4, dtype=bool))
    out = masked_attention(x, kv, w, 1, mask)
    np.testing.assert_allclose(out, kv @ w.v, rtol=0, atol=1e-12)


def test_six_token_case_matches_naive_oracle():
    x, kv, w = random_case(2, 6, 6, 4)
    rng = np.random.default_rng(3)
    mask = random_mask(rng, 6, 6)
    out, probs = masked_attention(x, kv, w, 4, mask, return_probs=True)
    ref, ref_probs = naive_attention(
        x.tolist(), kv.tolist(), w.q.tolist(), w.k.tolist(), w.v.tolist(), 4, blocked_pairs(mask)
    )
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-9)
    np.testing.assert_allclose(probs, ref_probs, rtol=0, atol=1e-9)


def test_self_attention_matches_oracle_with_rotary():
    lat = TokenLattice(2, 2, 2)
    layout = RopeLayout.default(16)
    table = build_3d_rope(lat, layout)
    x, _, w = random_case(4, lat.length, lat.length, 2)
    out = self_attention_3d(x, table, w, 2)
    c = [tuple(v) for v in table.coords.tolist()]
    ref, _ = naive_attention(
        x.tolist(), x.tolist(), w.q.tolist(), w.k.tolist(), w.v.tolist(), 2,
        q_coords=c, k_coords=c, groups=layout.groups,
    )
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-9)


def test_zero_coordinate_table_equals_plain_attention():
    lat = TokenLattice(2, 2, 2)
    table = build_3d_rope(lat, RopeLayout.default(16)).with_coords(np.zeros((8, 3), dtype=np.int64))
    x, _, w = random_case(5, 8, 8, 2)
    np.testing.assert_allclose(self_attention_3d(x, table, w, 2), masked_attention(x, x, w, 2),
                               rtol=0, atol=1e-12)


def test_swapping_tokens_and_coords_is_equivariant():
    lat = TokenLattice(2, 2, 2)
    table = build_3d_rope(lat, RopeLayout.default(16))
    x, _, w = random_case(6, 8, 8, 2)
    perm = np.arange(8)
    perm[[1, 6]] = perm[[6, 1]]
    swapped = table.with_coords(table.coords[perm])
    a = self_attention_3d(x, table, w, 2)
    b = self_attention_3d(x[perm], swapped, w, 2)
    np.testing.assert_allclose(b, a[perm], rtol=0, atol=1e-12)


def test_fully_blocked_row_raises():
    x, kv, w = random_case(7, 3, 3, 1)
    blocked = np.zeros((3, 3), dtype=bool)
    blocked[1] = True
    with pytest.raises(AllBlockedRow):
        masked_attention(x, kv, w, 1, AttentionMask(np.arange(3), np.arange(3), blocked))
    with pytest.raises(AllBlockedRow):
        masked_attention(x, kv[:0], w, 1)


def test_empty_background_span_fails_for_background_queries():
    lat = TokenLattice(1, 2, 2)
    cond = ConditionLayout((0, 3), (3, 3))
    mask = build_cross_mask(frozenset({0}), lat, cond)
    x, kv, w = random_case(8, 4, 3, 1)
    with pytest.raises(AllBlockedRow):
        masked_attention(x, kv, w, 1, mask)


def test_shape_errors():
    x, kv, w = random_case(9, 3, 3, 1)
    with pytest.raises(ShapeMismatch):
        masked_attention(x, kv[:, :8], w, 1)
    with pytest.raises(ShapeMismatch):
        masked_attention(x, kv, w, 1, AttentionMask.all_pass(3, 4))


def test_block_weights_are_reproducible():
    a, b = BlockWeights.init(11), BlockWeights.init(11)
    for name in ("q", "k", "v", "o"):
        assert np.array_equal(getattr(a.self_attn, name), getattr(b.self_attn, name))
    assert np.array_equal(a.ff_in, b.ff_in) and np.array_equal(a.ff_out, b.ff_out)
    assert not np.array_equal(a.ff_in, BlockWeights.init(12).ff_in)


def test_dit_block_is_deterministic_and_finite():
    lat = TokenLattice(2, 2, 2)
    table = build_3d_rope(lat, RopeLayout.default(16))
    weights = BlockWeights.init(0)
    x = np.random.default_rng(0).standard_normal((8, 64))
    cond = ConditionEmbedding(np.random.default_rng(1).standard_normal((5, 64)), ConditionLayout((0, 2), (2, 5)))
    cross = build_cross_mask(frozenset({0, 5}), lat, cond.layout)
    one = dit_block(x, weights, table, cond, cross_mask=cross)
    two = dit_block(x, weights, table, cond, cross_mask=cross)
    assert np.array_equal(one.residual, two.residual)
    assert np.all(np.isfinite(one.residual))
    assert one.self_probs.shape == (4, 8, 8)
    uncond = dit_block(x, weights, table)
    assert not np.array_equal(uncond.residual, one.residual)


def test_single_precision_option():
    lat = TokenLattice(1, 2, 2)
    table = build_3d_rope(lat, RopeLayout.default(16))
    w64 = BlockWeights.init(0)
    w32 = BlockWeights.init(0, dtype=np.float32)
    x = np.random.default_rng(0).standard_normal((4, 64))
    mask = build_self_mask(frozenset({0}), frozenset({3}), 4)
    a = dit_block(x, w64, table, self_mask=mask).residual
    b = dit_block(x.astype(np.float32), w32, table, self_mask=mask).residual
    assert b.dtype == np.float32
    np.testing.assert_allclose(b, a, rtol=1e-3, atol=1e-3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 16), st.integers(1, 16), st.sampled_from([1, 2, 4]))
def test_softmax_contract(seed, L, K, heads):
    rng = np.random.default_rng(seed)
    x, kv, w = random_case(seed, L, K, heads, head_dim=4)
    mask = random_mask(rng, L, K)
    _, probs = masked_attention(x, kv, w, heads, mask, return_probs=True)
    np.testing.assert_allclose(probs.sum(axis=-1), 1.0, rtol=0, atol=1e-9)
    assert np.all(probs[:, mask.dense_blocked()] <= 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 10))
def test_blocking_more_keys_renormalizes(seed, K):
    rng = np.random.default_rng(seed)
    x, kv, w = random_case(seed, 4, K, 2, head_dim=4)
    base = random_mask(rng, 4, K)
    extra = base.dense_blocked() | (rng.random((4, K)) < 0.3)
    extra[np.arange(4), np.argmin(base.dense_blocked(), axis=1)] = False
    tighter = AttentionMask(np.arange(4), np.arange(K), extra)
    _, probs = masked_attention(x, kv, w, 2, tighter, return_probs=True)
    assert np.all(probs[:, extra] <= 1e-12)
    np.testing.assert_allclose(probs.sum(axis=-1), 1.0, rtol=0, atol=1e-9)
