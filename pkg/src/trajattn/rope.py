"""3D rotary position embedding and the spatial-temporal decoupled variant.

Tables store integer (t, y, x) coordinates per token; rotation angles are
derived from them on demand. The decoupled transform edits the spatial
coordinates of foreground tokens only, so repeated-position detection later
is an exact integer comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BoxSizeMismatch, DimMismatch, OddGroup, OutOfBounds
from .lattice import TokenLattice
from .trajectory import Trajectory, box_positions, min_box_frame


def _round_even(v: float) -> int:
    return 2 * int(round(v / 2))


@dataclass(frozen=True)
class RopeLayout:
    """Per-axis channel split of one attention head.

    Channels are laid out ``[t | y | x]``; inside each group, adjacent pairs
    ``(2k, 2k+1)`` rotate together.
    """

    head_dim: int
    channels_t: int
    channels_y: int
    channels_x: int
    theta_base: float = 10000.0

    def __post_init__(self):
        groups = (self.channels_t, self.channels_y, self.channels_x)
        if any(g < 0 or g % 2 for g in groups):
            raise OddGroup(f"channel groups must be even and non-negative, got {groups}")
        if sum(groups) != self.head_dim:
            raise DimMismatch(f"channel groups {groups} do not sum to head_dim {self.head_dim}")
        if self.theta_base <= 0:
            raise ValueError("theta_base must be positive")

    @classmethod
    def default(cls, head_dim: int, theta_base: float = 10000.0) -> RopeLayout:
        """Split ``head_dim`` as roughly 1/4 temporal, 3/8 rows, 3/8 cols."""
        if head_dim < 2 or head_dim % 2:
            raise OddGroup(f"head_dim must be even, got {head_dim}")
        ct = _round_even(head_dim / 4)
        cy = _round_even(3 * head_dim / 8)
        return cls(head_dim, ct, cy, head_dim - ct - cy, theta_base)

    @property
    def groups(self) -> tuple[int, int, int]:
        return (self.channels_t, self.channels_y, self.channels_x)


def axis_angles(positions, group_size: int, theta_base: float = 10000.0) -> np.ndarray:
    """Angles for a batch of integer positions: ``(N, group_size // 2)``."""
    if group_size % 2:
        raise OddGroup(f"group size must be even, got {group_size}")
    k = np.arange(group_size // 2, dtype=np.float64)
    inv_freq = theta_base ** (-2.0 * k / group_size)
    return np.asarray(positions, dtype=np.float64)[:, None] * inv_freq[None, :]


def rope_angles_1d(position: int, group_size: int, theta_base: float = 10000.0) -> np.ndarray:
    return axis_angles([position], group_size, theta_base)[0]


@dataclass(frozen=True, eq=False)
class RopeTable:
    lattice: TokenLattice
    layout: RopeLayout
    coords: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coords, dtype=np.int64, copy=True)
        if c.shape != (self.lattice.length, 3):
            raise DimMismatch(f"coords shape {c.shape} != ({self.lattice.length}, 3)")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def temporal(self) -> np.ndarray:
        return self.coords[:, 0]

    @property
    def spatial(self) -> np.ndarray:
        return self.coords[:, 1:]

    def angles(self) -> np.ndarray:
        """``(L, head_dim // 2)`` rotation angles, temporal then row then col."""
        ct, cy, cx = self.layout.groups
        base = self.layout.theta_base
        return np.concatenate(
            [
                axis_angles(self.coords[:, 0], ct, base),
                axis_angles(self.coords[:, 1], cy, base),
                axis_angles(self.coords[:, 2], cx, base),
            ],
            axis=1,
        )

    def with_coords(self, coords: np.ndarray) -> RopeTable:
        return RopeTable(self.lattice, self.layout, coords)

    def equals(self, other: RopeTable) -> bool:
        return (
            self.lattice == other.lattice
            and self.layout == other.layout
            and np.array_equal(self.coords, other.coords)
        )


def build_3d_rope(lattice: TokenLattice, layout: RopeLayout) -> RopeTable:
    return RopeTable(lattice, layout, lattice.grid_coords())


def apply_rope(features: np.ndarray, table_or_angles) -> np.ndarray:
    """Rotate each channel pair ``(2k, 2k+1)`` of ``features`` by ``angle_k``.

    ``features`` is ``(..., L, head_dim)``; leading axes (e.g. heads) broadcast.
    """
    angles = table_or_angles.angles() if isinstance(table_or_angles, RopeTable) else table_or_angles
    angles = np.asarray(angles)
    features = np.asarray(features)
    if features.shape[-1] != 2 * angles.shape[-1] or features.shape[-2] != angles.shape[-2]:
        raise DimMismatch(
            f"features {features.shape} incompatible with angles {angles.shape}"
        )
    cos = np.cos(angles).astype(features.dtype, copy=False)
    sin = np.sin(angles).astype(features.dtype, copy=False)
    even = features[..., 0::2]
    odd = features[..., 1::2]
    out = np.empty_like(features)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def nn_upsample_box(anchor_coords: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Floor-index nearest-neighbour resampling of an ``(a_h, a_w, 2)`` grid.

    Works in both directions; ``target`` may be smaller than the anchor.
    """
    anchor_coords = np.asarray(anchor_coords)
    a_h, a_w = anchor_coords.shape[:2]
    b_h, b_w = target
    if min(a_h, a_w, b_h, b_w) < 1:
        raise OutOfBounds(f"grid sizes must be >= 1, got anchor {a_h}x{a_w} target {b_h}x{b_w}")
    rows = (np.arange(b_h) * a_h) // b_h
    cols = (np.arange(b_w) * a_w) // b_w
    return anchor_coords[rows[:, None], cols[None, :]]


def select_anchor(traj: Trajectory, mode: str = "random", seed: int | None = 0) -> int:
    if mode in ("min_box", "min-box"):
        return min_box_frame(traj)
    if mode == "random":
        return int(np.random.default_rng(seed).integers(0, traj.frames))
    raise ValueError(f"unknown anchor mode {mode!r}")


def std_rope(
    table: RopeTable, traj: Trajectory, anchor_frame: int, resample: bool = True
) -> RopeTable:
    """Copy the anchor box's spatial coordinates into every frame's box.

    Tokens inside box ``B_i`` receive, in raster order, the (y, x) of the
    anchor box tokens (resampled to the box shape when sizes differ and
    ``resample`` is set). Temporal coordinates are never written.
    """
    lattice = table.lattice
    traj.check(lattice)
    if not 0 <= anchor_frame < traj.frames:
        raise OutOfBounds(f"anchor frame {anchor_frame} outside [0, {traj.frames})")
    anchor_box = traj[anchor_frame]
    anchor_pos = box_positions(anchor_box, anchor_frame, lattice)
    anchor_grid = table.spatial[anchor_pos].reshape(anchor_box.height, anchor_box.width, 2)

    coords = np.array(table.coords)
    for t, box in enumerate(traj.boxes):
        if t == anchor_frame:
            continue
        if box.shape != anchor_box.shape:
            if not resample:
                raise BoxSizeMismatch(
                    f"frame {t} box {box.shape} differs from anchor box {anchor_box.shape}"
                )
            src = nn_upsample_box(anchor_grid, box.shape)
        else:
            src = anchor_grid
        coords[box_positions(box, t, lattice), 1:] = src.reshape(-1, 2)
    return table.with_coords(coords)


def std_rope_3d_aware(table: RopeTable, traj: Trajectory) -> RopeTable:
    """Decoupled transform anchored on the smallest box, resampled per frame."""
    return std_rope(table, traj, min_box_frame(traj), resample=True)
