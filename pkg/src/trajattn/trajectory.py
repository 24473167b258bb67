"""Bounding-box trajectories on the token grid.

A trajectory holds one box per latent frame. Boxes are half-open in token
units: columns ``[x0, x1)`` and rows ``[y0, y1)``.

Trajectory documents (YAML or JSON) look like::

    frames: 4
    mode: keyframes        # or perframe (default)
    units: tokens          # or pixels; pixels needs pixel_stride
    boxes:
      - [0, 0, 2, 2, 5]    # [frame, x0, y0, x1, y1]
      - [3, 6, 2, 8, 5]

Optional fields: ``pixel_stride`` (VAE spatial stride times patch size, used
when ``units: pixels``) and ``source_frames`` (perframe boxes given over that
many pixel frames, subsampled to ``frames`` latent frames by nearest index).
Any other key is rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable

import numpy as np
import yaml

from .errors import EmptyBox, FrameCountMismatch, MalformedDocument, OutOfBounds
from .lattice import TokenLattice

TokenSet = frozenset

_DOC_FIELDS = {"frames", "mode", "units", "boxes", "pixel_stride", "source_frames"}


@dataclass(frozen=True)
class BoundingBox:
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x0 < 0 or self.y0 < 0:
            raise OutOfBounds(f"box {self.as_tuple()} has a negative corner")
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise EmptyBox(f"box {self.as_tuple()} has zero area")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def shape(self) -> tuple[int, int]:
        """(rows, cols) of the box."""
        return (self.height, self.width)

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)

    def fits(self, lattice: TokenLattice) -> bool:
        return self.x1 <= lattice.cols and self.y1 <= lattice.rows

    def contains(self, y: int, x: int) -> bool:
        return self.y0 <= y < self.y1 and self.x0 <= x < self.x1

    def raster(self) -> list[tuple[int, int]]:
        """(y, x) cells of the box in raster order."""
        return [(y, x) for y in range(self.y0, self.y1) for x in range(self.x0, self.x1)]


@dataclass(frozen=True)
class Trajectory:
    boxes: tuple[BoundingBox, ...]

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if not self.boxes:
            raise MalformedDocument("trajectory has no boxes")

    def __len__(self) -> int:
        return len(self.boxes)

    def __getitem__(self, t: int) -> BoundingBox:
        return self.boxes[t]

    @property
    def frames(self) -> int:
        return len(self.boxes)

    @property
    def areas(self) -> list[int]:
        return [b.area for b in self.boxes]

    @property
    def is_static(self) -> bool:
        return all(b == self.boxes[0] for b in self.boxes)

    def check(self, lattice: TokenLattice) -> None:
        """Raise if the trajectory does not fit ``lattice``."""
        if self.frames != lattice.frames:
            raise FrameCountMismatch(
                f"trajectory has {self.frames} frames, lattice has {lattice.frames}"
            )
        for t, box in enumerate(self.boxes):
            if not box.fits(lattice):
                raise OutOfBounds(
                    f"frame {t}: box {box.as_tuple()} exceeds grid "
                    f"{lattice.cols}x{lattice.rows} (cols x rows)"
                )

    @classmethod
    def from_tuples(cls, boxes: Iterable[tuple[int, int, int, int]]) -> Trajectory:
        return cls(tuple(BoundingBox(*map(int, b)) for b in boxes))

    @classmethod
    def static(cls, box: tuple[int, int, int, int], frames: int) -> Trajectory:
        return cls.from_tuples([box] * frames)


def round_half_up(value: Fraction | int) -> int:
    return math.floor(Fraction(value) + Fraction(1, 2))


def _box_record(rec: Any, idx: int) -> tuple[int, tuple[Fraction, ...]]:
    if not isinstance(rec, (list, tuple)) or len(rec) != 5:
        raise MalformedDocument(f"box record {idx} must be [frame, x0, y0, x1, y1], got {rec!r}")
    if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in rec):
        raise MalformedDocument(f"box record {idx} has non-numeric fields: {rec!r}")
    if rec[0] != int(rec[0]):
        raise MalformedDocument(f"box record {idx}: frame index must be an integer")
    return int(rec[0]), tuple(Fraction(v) for v in rec[1:])


def _to_tokens(corners: tuple[Fraction, ...], units: str, stride: int | None) -> tuple[Fraction, ...]:
    if units == "tokens":
        return corners
    # pixel boxes round outward so the whole pixel box stays covered
    x0, y0, x1, y1 = (c / stride for c in corners)
    return (Fraction(math.floor(x0)), Fraction(math.floor(y0)),
            Fraction(math.ceil(x1)), Fraction(math.ceil(y1)))


def _make_box(frame: int, corners: Iterable[Fraction]) -> BoundingBox:
    ints = tuple(round_half_up(c) for c in corners)
    try:
        return BoundingBox(*ints)
    except EmptyBox as exc:
        raise EmptyBox(f"frame {frame}: {exc}") from None
    except OutOfBounds as exc:
        raise OutOfBounds(f"frame {frame}: {exc}") from None


def _load_document(document: Any) -> dict:
    if isinstance(document, Path):
        try:
            text = document.read_text()
        except OSError as exc:
            raise MalformedDocument(f"cannot read trajectory file {document}: {exc}") from None
        document = text
    if isinstance(document, str):
        try:
            document = yaml.safe_load(document)
        except yaml.YAMLError as exc:
            raise MalformedDocument(f"trajectory document is not valid YAML/JSON: {exc}") from None
    if not isinstance(document, dict):
        raise MalformedDocument("trajectory document must be a mapping")
    return document


def parse_trajectory(document: Any) -> Trajectory:
    """Parse a trajectory document (mapping, YAML/JSON text, or ``Path``)."""
    doc = _load_document(document)
    unknown = set(doc) - _DOC_FIELDS
    if unknown:
        raise MalformedDocument(f"unknown trajectory fields: {sorted(unknown)}")
    for key in ("frames", "boxes"):
        if key not in doc:
            raise MalformedDocument(f"trajectory document missing '{key}'")

    frames = doc["frames"]
    if isinstance(frames, bool) or not isinstance(frames, int) or frames < 1:
        raise MalformedDocument(f"'frames' must be a positive integer, got {frames!r}")
    mode = doc.get("mode", "perframe")
    if mode not in ("perframe", "keyframes"):
        raise MalformedDocument(f"'mode' must be perframe or keyframes, got {mode!r}")
    units = doc.get("units", "tokens")
    if units not in ("tokens", "pixels"):
        raise MalformedDocument(f"'units' must be tokens or pixels, got {units!r}")
    stride = doc.get("pixel_stride")
    if units == "pixels" and (not isinstance(stride, int) or isinstance(stride, bool) or stride < 1):
        raise MalformedDocument("'units: pixels' requires a positive integer 'pixel_stride'")
    if not isinstance(doc["boxes"], list) or not doc["boxes"]:
        raise MalformedDocument("'boxes' must be a non-empty list")

    records: dict[int, tuple[Fraction, ...]] = {}
    for idx, rec in enumerate(doc["boxes"]):
        frame, corners = _box_record(rec, idx)
        if frame in records:
            raise MalformedDocument(f"frame {frame} listed twice")
        records[frame] = _to_tokens(corners, units, stride)

    if mode == "keyframes":
        return _interpolate_keyframes(records, frames)

    source = doc.get("source_frames", frames)
    if isinstance(source, bool) or not isinstance(source, int) or source < frames:
        raise MalformedDocument(f"'source_frames' must be an integer >= frames, got {source!r}")
    if sorted(records) != list(range(source)):
        raise FrameCountMismatch(
            f"perframe trajectory needs boxes for frames 0..{source - 1}, got {sorted(records)}"
        )
    boxes = []
    for t in range(frames):
        src = 0 if frames == 1 else round_half_up(Fraction(t * (source - 1), frames - 1))
        boxes.append(_make_box(t, records[src]))
    return Trajectory(tuple(boxes))


def _interpolate_keyframes(keys: dict[int, tuple[Fraction, ...]], frames: int) -> Trajectory:
    if len(keys) < 2:
        raise MalformedDocument("keyframes mode needs at least two keyframes")
    order = sorted(keys)
    if order[0] != 0 or order[-1] != frames - 1:
        raise FrameCountMismatch(
            f"keyframes must start at frame 0 and end at frame {frames - 1}, got {order}"
        )
    boxes = []
    for a, b in zip(order, order[1:]):
        ca, cb = keys[a], keys[b]
        for t in range(a, b):
            w = Fraction(t - a, b - a)
            boxes.append(_make_box(t, [pa + (pb - pa) * w for pa, pb in zip(ca, cb)]))
    boxes.append(_make_box(order[-1], keys[order[-1]]))
    return Trajectory(tuple(boxes))


def trajectory_to_document(traj: Trajectory) -> dict:
    return {
        "frames": traj.frames,
        "mode": "perframe",
        "units": "tokens",
        "boxes": [[t, *b.as_tuple()] for t, b in enumerate(traj.boxes)],
    }


def foreground_token_set(traj: Trajectory, lattice: TokenLattice) -> TokenSet:
    """Flat positions whose native lattice coordinates lie inside their frame's box."""
    return TokenSet(np.flatnonzero(foreground_mask(traj, lattice)).tolist())


def foreground_mask(traj: Trajectory, lattice: TokenLattice) -> np.ndarray:
    traj.check(lattice)
    grid = np.zeros(lattice.dims, dtype=bool)
    for t, b in enumerate(traj.boxes):
        grid[t, b.y0:b.y1, b.x0:b.x1] = True
    return grid.ravel()


def box_positions(box: BoundingBox, t: int, lattice: TokenLattice) -> np.ndarray:
    """Flat positions of ``box`` in frame ``t``, raster order."""
    ys, xs = np.meshgrid(np.arange(box.y0, box.y1), np.arange(box.x0, box.x1), indexing="ij")
    return (t * lattice.rows + ys.ravel()) * lattice.cols + xs.ravel()


def min_box_frame(traj: Trajectory) -> int:
    # list.index returns the first minimum, which is the tie-break we want
    areas = traj.areas
    return areas.index(min(areas))
