"""Atomic CSV / plain-PGM / JSON writers."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .masking import AttentionMask
from .rope import RopeTable


def atomic_write_text(path: str | os.PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return atomic_write_text(path, buf.getvalue())


def write_json(path, obj) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def to_gray(values: np.ndarray, maxval: int = 255) -> np.ndarray:
    """Linear scaling, min -> 0 and max -> ``maxval``; a constant image maps to 0."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros(v.shape, dtype=np.int64)
    return np.rint((v - lo) / (hi - lo) * maxval).astype(np.int64)


def pgm_text(gray: np.ndarray, maxval: int = 255) -> str:
    h, w = gray.shape
    lines = ["P2", f"{w} {h}", str(maxval)]
    lines += [" ".join(str(int(v)) for v in row) for row in gray]
    return "\n".join(lines) + "\n"


def write_pgm(path, gray: np.ndarray, maxval: int = 255) -> Path:
    return atomic_write_text(path, pgm_text(gray, maxval))


def read_pgm(path) -> tuple[np.ndarray, int]:
    tokens = []
    for line in Path(path).read_text().splitlines():
        tokens += line.split("#", 1)[0].split()
    if tokens[0] != "P2":
        raise ValueError("not a plain PGM file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
    return data.reshape(h, w), maxval


def write_matrix_csv(path, matrix: np.ndarray) -> Path:
    rows = ([repr(float(v)) for v in row] for row in matrix)
    header = [f"k{j}" for j in range(matrix.shape[1])]
    return write_csv(path, header, rows)


def export_rope_csv(path, table: RopeTable) -> Path:
    rows = ([i, *map(int, c)] for i, c in enumerate(table.coords))
    return write_csv(path, ["flat_index", "t", "y", "x"], rows)


def export_mask_csv(path, mask: AttentionMask) -> Path:
    return write_csv(path, ["query", "key"], mask.blocked_pairs().tolist())


def export_mask_pgm(path, mask: AttentionMask) -> Path:
    """Dense grid, 1 = pass (white) and 0 = blocked."""
    return write_pgm(path, (~mask.dense_blocked()).astype(np.int64), maxval=1)
