"""Scaled dot-product attention with additive masks, and a toy DiT block.

The block stands in for one pretrained transformer layer: 3D full
self-attention with rotary embedding, masked cross-attention to a text
condition, and a feed-forward layer, all with seeded random weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AllBlockedRow, ShapeMismatch, TrajAttnError
from .masking import AttentionMask, ConditionLayout
from .rope import RopeTable, apply_rope


@dataclass(frozen=True, eq=False)
class ConditionEmbedding:
    keys: np.ndarray = field(repr=False)
    layout: ConditionLayout | None = None

    def __post_init__(self):
        if self.keys.ndim != 2:
            raise ShapeMismatch(f"condition keys must be 2-D, got shape {self.keys.shape}")
        if self.layout is not None and self.layout.key_count != len(self.keys):
            raise ShapeMismatch(
                f"layout covers {self.layout.key_count} keys, embedding has {len(self.keys)}"
            )

    def __len__(self) -> int:
        return len(self.keys)


@dataclass(frozen=True, eq=False)
class AttentionWeights:
    q: np.ndarray = field(repr=False)
    k: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    o: np.ndarray = field(repr=False)

    @classmethod
    def random(cls, rng: np.random.Generator, dim: int, qk_align: float = 0.0) -> AttentionWeights:
        """Gaussian projections with std ``1/sqrt(dim)``.

        ``qk_align`` in [0, 1] correlates the key projection with the query
        projection, so a token's query points towards its own key. Trained
        attention layers show this; with it, similar rotary phases yield
        higher scores, as they do in pretrained models.
        """
        s = 1.0 / np.sqrt(dim)
        q = rng.standard_normal((dim, dim)) * s
        k_noise = rng.standard_normal((dim, dim)) * s
        k = qk_align * q + np.sqrt(1.0 - qk_align**2) * k_noise
        v = rng.standard_normal((dim, dim)) * s
        o = rng.standard_normal((dim, dim)) * s
        return cls(q, k, v, o)

    def astype(self, dtype) -> AttentionWeights:
        return AttentionWeights(*(a.astype(dtype) for a in (self.q, self.k, self.v, self.o)))


@dataclass(frozen=True, eq=False)
class BlockWeights:
    dim: int
    heads: int
    seed: int
    qk_align: float
    self_attn: AttentionWeights = field(repr=False)
    cross_attn: AttentionWeights = field(repr=False)
    ff_in: np.ndarray = field(repr=False)
    ff_out: np.ndarray = field(repr=False)

    @classmethod
    def init(
        cls, seed: int = 0, dim: int = 64, heads: int = 4, qk_align: float = 0.9, dtype=np.float64
    ) -> BlockWeights:
        if dim % heads:
            raise ShapeMismatch(f"dim {dim} not divisible by heads {heads}")
        rng = np.random.default_rng(seed)
        sa = AttentionWeights.random(rng, dim, qk_align)
        ca = AttentionWeights.random(rng, dim, qk_align=0.0)
        ff_in = rng.standard_normal((dim, 4 * dim)) / np.sqrt(dim)
        ff_out = rng.standard_normal((4 * dim, dim)) / np.sqrt(4 * dim)
        return cls(dim, heads, seed, qk_align, sa.astype(dtype), ca.astype(dtype),
                   ff_in.astype(dtype), ff_out.astype(dtype))

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


def split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    n, d = x.shape
    if d % heads:
        raise ShapeMismatch(f"width {d} not divisible by {heads} heads")
    return x.reshape(n, heads, d // heads).transpose(1, 0, 2)


def merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, hd = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * hd)


def check_finite(x: np.ndarray, what: str = "features") -> None:
    if not np.all(np.isfinite(x)):
        raise TrajAttnError(f"{what} contain NaN or Inf")


def _resolve_mask(mask: AttentionMask | None, q_len: int, k_len: int, dtype) -> np.ndarray | None:
    if k_len == 0:
        raise AllBlockedRow("no keys to attend to")
    if mask is None:
        return None
    if mask.shape != (q_len, k_len):
        raise ShapeMismatch(f"mask shape {mask.shape} != ({q_len}, {k_len})")
    blocked = mask.dense_blocked()
    dead = np.flatnonzero(blocked.all(axis=1))
    if dead.size:
        raise AllBlockedRow(f"query rows {dead[:8].tolist()} have every key blocked")
    return mask.additive(dtype)


def attention_probs(q: np.ndarray, k: np.ndarray, additive: np.ndarray | None = None) -> np.ndarray:
    """Row softmax of ``q k^T / sqrt(head_dim) + additive`` for ``(H, N, hd)`` inputs."""
    scores = q @ k.transpose(0, 2, 1) / math.sqrt(q.shape[-1])
    if additive is not None:
        scores = scores + additive
    scores = scores - scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    return w / w.sum(axis=-1, keepdims=True)


def masked_attention(
    x: np.ndarray,
    kv,
    weights: AttentionWeights,
    heads: int,
    mask: AttentionMask | None = None,
    q_angles: np.ndarray | None = None,
    k_angles: np.ndarray | None = None,
    return_probs: bool = False,
):
    """Multi-head attention of ``x`` over ``kv`` with an optional additive mask.

    Returns the head-concatenated ``softmax(...) V`` of shape ``(Q, D)``
    (before the output projection), plus the ``(H, Q, K)`` weights when
    ``return_probs`` is set.
    """
    kv_arr = kv.keys if isinstance(kv, ConditionEmbedding) else kv
    if x.ndim != 2 or kv_arr.ndim != 2 or x.shape[1] != kv_arr.shape[1]:
        raise ShapeMismatch(f"query {x.shape} and key/value {kv_arr.shape} widths disagree")
    if x.shape[1] != weights.q.shape[0]:
        raise ShapeMismatch(f"feature width {x.shape[1]} != weight width {weights.q.shape[0]}")
    additive = _resolve_mask(mask, len(x), len(kv_arr), x.dtype)

    q = split_heads(x @ weights.q, heads)
    k = split_heads(kv_arr @ weights.k, heads)
    v = split_heads(kv_arr @ weights.v, heads)
    if q_angles is not None:
        q = apply_rope(q, q_angles)
    if k_angles is not None:
        k = apply_rope(k, k_angles)
    probs = attention_probs(q, k, additive)
    out = merge_heads(probs @ v)
    return (out, probs) if return_probs else out


def self_attention_3d(
    x: np.ndarray,
    table: RopeTable,
    weights: AttentionWeights,
    heads: int,
    mask: AttentionMask | None = None,
    return_probs: bool = False,
):
    """Full attention over every token of every frame, rotary applied to Q and K."""
    if table.layout.head_dim * heads != x.shape[1]:
        raise ShapeMismatch(
            f"rope head_dim {table.layout.head_dim} x {heads} heads != width {x.shape[1]}"
        )
    if table.lattice.length != len(x):
        raise ShapeMismatch(f"table covers {table.lattice.length} tokens, got {len(x)}")
    angles = table.angles()
    return masked_attention(x, x, weights, heads, mask, angles, angles, return_probs)


def layer_norm(x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


@dataclass
class BlockOutput:
    residual: np.ndarray
    self_probs: np.ndarray


def self_attention_probs(
    x: np.ndarray, table: RopeTable, weights: BlockWeights, mask: AttentionMask | None = None
) -> np.ndarray:
    """Per-head self-attention weights ``(H, L, L)`` as seen inside the block."""
    _, probs = self_attention_3d(
        layer_norm(x), table, weights.self_attn, weights.heads, mask, return_probs=True
    )
    return probs


def dit_block(
    x: np.ndarray,
    weights: BlockWeights,
    table: RopeTable,
    cond: ConditionEmbedding | None = None,
    self_mask: AttentionMask | None = None,
    cross_mask: AttentionMask | None = None,
) -> BlockOutput:
    """One pre-norm block; returns the summed residual and self-attention weights.

    ``cond=None`` skips cross-attention (the unconditional branch).
    """
    check_finite(x)
    sa, probs = self_attention_3d(
        layer_norm(x), table, weights.self_attn, weights.heads, self_mask, return_probs=True
    )
    sa = sa @ weights.self_attn.o
    h = x + sa
    residual = sa
    if cond is not None:
        ca = masked_attention(layer_norm(h), cond, weights.cross_attn, weights.heads, cross_mask)
        ca = ca @ weights.cross_attn.o
        h = h + ca
        residual = residual + ca
    ff = gelu(layer_norm(h) @ weights.ff_in) @ weights.ff_out
    residual = residual + ff
    check_finite(residual, "block output")
    return BlockOutput(residual, probs)
