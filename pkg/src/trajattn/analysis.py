"""Inter-frame attention-map measurements on the toy block."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import BlockWeights, self_attention_probs
from .errors import OutOfBounds
from .lattice import TokenLattice
from .masking import AttentionMask, build_self_mask, r_token_set, repeat_token_sets
from .rope import RopeLayout, RopeTable, build_3d_rope, select_anchor, std_rope, std_rope_3d_aware
from .trajectory import Trajectory, box_positions, foreground_token_set


def head_averaged_probs(
    x: np.ndarray, table: RopeTable, weights: BlockWeights, mask: AttentionMask | None = None
) -> np.ndarray:
    return self_attention_probs(x, table, weights, mask).mean(axis=0)


def frame_block(probs: np.ndarray, lattice: TokenLattice, frame_a: int, frame_b: int) -> np.ndarray:
    return probs[lattice.frame_slice(frame_a), lattice.frame_slice(frame_b)]


def attention_map(
    x: np.ndarray,
    table: RopeTable,
    mask: AttentionMask | None,
    weights: BlockWeights,
    frame_a: int,
    frame_b: int,
) -> np.ndarray:
    """Head-averaged weights from frame ``a`` queries to frame ``b`` keys."""
    lattice = table.lattice
    for f in (frame_a, frame_b):
        if not 0 <= f < lattice.frames:
            raise OutOfBounds(f"frame {f} outside [0, {lattice.frames})")
    return frame_block(head_averaged_probs(x, table, weights, mask), lattice, frame_a, frame_b)


def inter_frame_fg_score(probs: np.ndarray, traj: Trajectory, lattice: TokenLattice) -> float | None:
    """Mean attention mass a box token in frame a sends to the box of frame b != a.

    Averaged over every box query and every other frame. ``None`` for a
    single-frame lattice.
    """
    if lattice.frames < 2:
        return None
    boxes = [box_positions(b, t, lattice) for t, b in enumerate(traj.boxes)]
    total, count = 0.0, 0
    for a, qa in enumerate(boxes):
        rows = probs[qa]
        for b, kb in enumerate(boxes):
            if a == b:
                continue
            total += float(rows[:, kb].sum())
            count += len(qa)
    return total / count


def diagonal_ratio(block: np.ndarray) -> float:
    """Mean of the same-(y, x) diagonal over the mean of everything else."""
    n = block.shape[0]
    diag = np.diag(block)
    off = (block.sum() - diag.sum()) / (n * n - n)
    return float(diag.mean() / off)


def toy_features(lattice: TokenLattice, dim: int, seed: int, shared: float = 1.0) -> np.ndarray:
    """Seeded token features: a common content vector plus per-token noise."""
    rng = np.random.default_rng([seed, 1])
    base = rng.standard_normal(dim)
    return shared * base[None, :] + rng.standard_normal((lattice.length, dim))


@dataclass
class UpliftResult:
    seed: int
    anchor_frame: int
    before: float
    after: float
    after_masked: float
    diagonal_ratio: float

    @property
    def margin(self) -> float:
        return self.after - self.before


def control_tables(
    table: RopeTable, traj: Trajectory, anchor_frame: int, three_d_aware: bool = False
) -> tuple[RopeTable, AttentionMask, dict]:
    """Decoupled table plus R-token self mask and the set sizes behind it."""
    lattice = table.lattice
    std = std_rope_3d_aware(table, traj) if three_d_aware else std_rope(table, traj, anchor_frame)
    fg = foreground_token_set(traj, lattice)
    rep = repeat_token_sets(std, lattice)
    r = r_token_set(rep.all, fg)
    sizes = {
        "fg": len(fg),
        "repeat": len(rep),
        "repeat_per_frame": [len(s) for s in rep.per_frame],
        "r": len(r),
    }
    return std, build_self_mask(fg, r, lattice.length), sizes


def std_uplift(
    lattice: TokenLattice,
    traj: Trajectory,
    seed: int,
    dim: int = 64,
    heads: int = 4,
    qk_align: float = 0.9,
    anchor_mode: str = "min_box",
    frame_pair: tuple[int, int] | None = None,
) -> UpliftResult:
    """Inter-frame foreground score before/after the decoupled transform."""
    weights = BlockWeights.init(seed, dim, heads, qk_align)
    x = toy_features(lattice, dim, seed)
    table = build_3d_rope(lattice, RopeLayout.default(dim // heads))
    anchor = select_anchor(traj, anchor_mode, seed)
    std, self_mask, _ = control_tables(table, traj, anchor)

    p0 = head_averaged_probs(x, table, weights)
    p1 = head_averaged_probs(x, std, weights)
    p2 = head_averaged_probs(x, std, weights, self_mask)
    fa, fb = frame_pair or (0, lattice.frames - 1)
    return UpliftResult(
        seed=seed,
        anchor_frame=anchor,
        before=inter_frame_fg_score(p0, traj, lattice),
        after=inter_frame_fg_score(p1, traj, lattice),
        after_masked=inter_frame_fg_score(p2, traj, lattice),
        diagonal_ratio=diagonal_ratio(frame_block(p0, lattice, fa, fb)),
    )
