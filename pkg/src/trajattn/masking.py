"""Cross- and self-attention masks for foreground/background routing.

Masks are stored compactly: every query gets a row label, every key a column
label, and a small boolean table says which (row label, col label) pairs are
blocked. The dense additive form is only built at attention time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import OutOfBounds, SetsOverlap, SpanOverlap
from .lattice import TokenLattice
from .rope import RopeTable
from .trajectory import TokenSet

# additive value standing in for -inf; exp() of it underflows to exactly 0
BLOCK_VALUE = {np.dtype(np.float64): -1e18, np.dtype(np.float32): -1e9}


def block_value(dtype) -> float:
    return BLOCK_VALUE.get(np.dtype(dtype), -np.inf)


def _as_index(tokens: Iterable[int], size: int, what: str) -> np.ndarray:
    idx = np.fromiter(tokens, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise OutOfBounds(f"{what} contains positions outside [0, {size})")
    return idx


@dataclass(frozen=True, eq=False)
class AttentionMask:
    """Block-structured additive mask.

    ``blocked(i, j) = table[row_labels[i], col_labels[j]]``.
    """

    row_labels: np.ndarray = field(repr=False)
    col_labels: np.ndarray = field(repr=False)
    table: np.ndarray

    def __post_init__(self):
        for name in ("row_labels", "col_labels", "table"):
            arr = np.array(getattr(self, name), copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def all_pass(cls, queries: int, keys: int) -> AttentionMask:
        return cls(np.zeros(queries, np.int64), np.zeros(keys, np.int64), np.zeros((1, 1), bool))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.row_labels.size, self.col_labels.size)

    def blocked(self, i: int, j: int) -> bool:
        return bool(self.table[self.row_labels[i], self.col_labels[j]])

    def dense_blocked(self) -> np.ndarray:
        return self.table[self.row_labels[:, None], self.col_labels[None, :]]

    def additive(self, dtype=np.float64, value: float | None = None) -> np.ndarray:
        if value is None:
            value = block_value(dtype)
        out = np.zeros(self.shape, dtype=dtype)
        out[self.dense_blocked()] = value
        return out

    def blocked_pairs(self) -> np.ndarray:
        """``(n, 2)`` array of blocked (query, key) pairs in row-major order."""
        pairs = []
        for rl, cl in zip(*np.nonzero(self.table)):
            rows = np.flatnonzero(self.row_labels == rl)
            cols = np.flatnonzero(self.col_labels == cl)
            if rows.size and cols.size:
                pairs.append(np.stack(np.meshgrid(rows, cols, indexing="ij"), -1).reshape(-1, 2))
        if not pairs:
            return np.zeros((0, 2), dtype=np.int64)
        out = np.concatenate(pairs)
        return out[np.lexsort((out[:, 1], out[:, 0]))]

    def blocked_count(self) -> int:
        rows = np.bincount(self.row_labels, minlength=self.table.shape[0])
        cols = np.bincount(self.col_labels, minlength=self.table.shape[1])
        return int(rows @ self.table.astype(np.int64) @ cols)

    def is_symmetric(self) -> bool:
        if self.shape[0] != self.shape[1]:
            return False
        b = self.dense_blocked()
        return bool(np.array_equal(b, b.T))


@dataclass(frozen=True)
class ConditionLayout:
    """Key-index partition of the union condition: half-open spans."""

    fg_span: tuple[int, int]
    bg_span: tuple[int, int]

    def __post_init__(self):
        spans = sorted([tuple(self.fg_span), tuple(self.bg_span)])
        for a, b in spans:
            if a < 0 or b < a:
                raise SpanOverlap(f"invalid span [{a}, {b})")
        (a0, a1), (b0, b1) = spans
        if min(a1, b1) > max(a0, b0):
            raise SpanOverlap(f"spans {self.fg_span} and {self.bg_span} overlap")
        if a0 != 0 or a1 != b0:
            raise SpanOverlap(f"spans {self.fg_span} and {self.bg_span} do not partition the keys")

    @property
    def key_count(self) -> int:
        return max(self.fg_span[1], self.bg_span[1])

    def key_labels(self) -> np.ndarray:
        """0 for foreground-prompt keys, 1 for background-prompt keys."""
        labels = np.empty(self.key_count, dtype=np.int64)
        labels[slice(*self.fg_span)] = 0
        labels[slice(*self.bg_span)] = 1
        return labels


def build_cross_mask(fg_tokens: TokenSet, lattice: TokenLattice, cond: ConditionLayout) -> AttentionMask:
    """Route foreground queries to foreground-prompt keys, the rest to background keys."""
    rows = np.zeros(lattice.length, dtype=np.int64)
    rows[_as_index(fg_tokens, lattice.length, "foreground set")] = 1
    # row 0 = background query, row 1 = foreground query; col 0 = fg key, col 1 = bg key
    table = np.array([[True, False], [False, True]])
    return AttentionMask(rows, cond.key_labels(), table)


@dataclass(frozen=True)
class RepeatSets:
    per_frame: tuple[frozenset, ...]

    @property
    def all(self) -> TokenSet:
        return TokenSet().union(*self.per_frame)

    def __len__(self) -> int:
        return sum(len(s) for s in self.per_frame)


def repeat_token_sets(table: RopeTable, lattice: TokenLattice | None = None) -> RepeatSets:
    """Tokens sharing their (y, x) with another token of the same frame."""
    lattice = lattice or table.lattice
    n = lattice.frame_size
    spatial = table.spatial
    per_frame = []
    for t in range(lattice.frames):
        s = spatial[t * n:(t + 1) * n]
        key = s[:, 0] * (int(s[:, 1].max()) + 1) + s[:, 1]
        _, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
        dup = np.flatnonzero(counts[inverse.ravel()] > 1) + t * n
        per_frame.append(frozenset(dup.tolist()))
    return RepeatSets(tuple(per_frame))


def r_token_set(repeat: Iterable[int], fg_tokens: Iterable[int]) -> TokenSet:
    return TokenSet(repeat) - TokenSet(fg_tokens)


def build_self_mask(fg_tokens: TokenSet, r_tokens: TokenSet, length: int) -> AttentionMask:
    """Block attention in both directions between foreground and R tokens."""
    fg = _as_index(fg_tokens, length, "foreground set")
    r = _as_index(r_tokens, length, "R-token set")
    labels = np.zeros(length, dtype=np.int64)
    labels[fg] = 1
    if np.any(labels[r] == 1):
        raise SetsOverlap("foreground and R-token sets intersect")
    labels[r] = 2
    table = np.zeros((3, 3), dtype=bool)
    table[1, 2] = table[2, 1] = True
    return AttentionMask(labels, labels, table)
