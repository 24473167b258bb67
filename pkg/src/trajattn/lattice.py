"""Token grid geometry for patchified video latents.

Tokens are flattened frame-outermost, column-innermost, so every frame
occupies one contiguous block of ``rows * cols`` positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonDivisible, OutOfBounds


@dataclass(frozen=True)
class LatentShape:
    """Shape bookkeeping for a latent video tensor (batch fixed to 1).

    ``pixel_*`` fields default to the latent sizes; they only exist so the
    non-expanding VAE constraint can be checked.
    """

    frames: int
    height: int
    width: int
    patch: int = 2
    channels: int = 16
    embed_dim: int = 64
    pixel_frames: int | None = None
    pixel_height: int | None = None
    pixel_width: int | None = None
    batch: int = 1

    def __post_init__(self):
        if self.frames < 1 or self.patch < 1 or self.embed_dim < 1:
            raise OutOfBounds("frames, patch and embed_dim must be >= 1")
        if self.height < 1 or self.width < 1 or self.channels < 1:
            raise OutOfBounds("height, width and channels must be >= 1")
        if self.batch != 1:
            raise OutOfBounds("batch is fixed to 1")
        for pix, lat, name in (
            (self.pixel_frames, self.frames, "frames"),
            (self.pixel_height, self.height, "height"),
            (self.pixel_width, self.width, "width"),
        ):
            if pix is not None and pix < lat:
                raise OutOfBounds(f"pixel {name} {pix} smaller than latent {name} {lat}")


@dataclass(frozen=True)
class TokenLattice:
    frames: int
    rows: int
    cols: int

    def __post_init__(self):
        if min(self.frames, self.rows, self.cols) < 1:
            raise OutOfBounds(f"lattice dims must be >= 1, got {self.dims}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.frames, self.rows, self.cols)

    @property
    def frame_size(self) -> int:
        return self.rows * self.cols

    @property
    def length(self) -> int:
        return self.frames * self.rows * self.cols

    def __len__(self) -> int:
        return self.length

    def flat_index(self, t: int, y: int, x: int) -> int:
        if not (0 <= t < self.frames and 0 <= y < self.rows and 0 <= x < self.cols):
            raise OutOfBounds(f"coordinate (t={t}, y={y}, x={x}) outside lattice {self.dims}")
        return (t * self.rows + y) * self.cols + x

    def coords(self, position: int) -> tuple[int, int, int]:
        if not 0 <= position < self.length:
            raise OutOfBounds(f"position {position} outside [0, {self.length})")
        t, rem = divmod(position, self.frame_size)
        y, x = divmod(rem, self.cols)
        return (t, y, x)

    def frame_slice(self, t: int) -> slice:
        if not 0 <= t < self.frames:
            raise OutOfBounds(f"frame {t} outside [0, {self.frames})")
        return slice(t * self.frame_size, (t + 1) * self.frame_size)

    def grid_coords(self) -> np.ndarray:
        """All (t, y, x) triples as an ``(L, 3)`` int64 array in flat order."""
        t, y, x = np.meshgrid(
            np.arange(self.frames), np.arange(self.rows), np.arange(self.cols), indexing="ij"
        )
        return np.stack([t.ravel(), y.ravel(), x.ravel()], axis=1).astype(np.int64)


def patchify(shape: LatentShape) -> TokenLattice:
    if shape.height % shape.patch or shape.width % shape.patch:
        raise NonDivisible(
            f"latent {shape.height}x{shape.width} not divisible by patch size {shape.patch}"
        )
    return TokenLattice(shape.frames, shape.height // shape.patch, shape.width // shape.patch)


def flat_index(lattice: TokenLattice, t: int, y: int, x: int) -> int:
    return lattice.flat_index(t, y, x)


def coords(lattice: TokenLattice, position: int) -> tuple[int, int, int]:
    return lattice.coords(position)
