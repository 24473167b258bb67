"""Slow, loop-based reference implementations used only by the tests.

Nothing here imports the package's numerical code; each function evaluates
its definition directly so it can serve as an independent check.
"""

from __future__ import annotations

import cmath
import math


def row_major_coords(frames, rows, cols):
    out = []
    for t in range(frames):
        for y in range(rows):
            for x in range(cols):
                out.append((t, y, x))
    return out


def foreground_positions(frames, rows, cols, boxes):
    """boxes: list of (x0, y0, x1, y1) per frame."""
    fg = set()
    for pos, (t, y, x) in enumerate(row_major_coords(frames, rows, cols)):
        x0, y0, x1, y1 = boxes[t]
        if x0 <= x < x1 and y0 <= y < y1:
            fg.add(pos)
    return fg


def floor_map(anchor, b_h, b_w):
    """anchor: nested list a_h x a_w of cells."""
    a_h, a_w = len(anchor), len(anchor[0])
    return [[anchor[(r * a_h) // b_h][(c * a_w) // b_w] for c in range(b_w)] for r in range(b_h)]


def std_coords(frames, rows, cols, boxes, anchor):
    """Decoupled (t, y, x) per token, by direct per-frame box rewriting."""
    coords = [list(c) for c in row_major_coords(frames, rows, cols)]
    ax0, ay0, ax1, ay1 = boxes[anchor]
    anchor_grid = [[(y, x) for x in range(ax0, ax1)] for y in range(ay0, ay1)]
    for t in range(frames):
        if t == anchor:
            continue
        x0, y0, x1, y1 = boxes[t]
        grid = floor_map(anchor_grid, y1 - y0, x1 - x0)
        for r, y in enumerate(range(y0, y1)):
            for c, x in enumerate(range(x0, x1)):
                pos = (t * rows + y) * cols + x
                coords[pos][1], coords[pos][2] = grid[r][c]
    return [tuple(c) for c in coords]


def repeat_positions(frames, rows, cols, coords):
    n = rows * cols
    rep = set()
    for t in range(frames):
        for p in range(t * n, (t + 1) * n):
            for q in range(t * n, (t + 1) * n):
                if p != q and coords[p][1:] == coords[q][1:]:
                    rep.add(p)
    return rep


def cross_pass(L, fg, fg_span, bg_span, key_count):
    """Pass set of the foreground/background cross mask, one pair at a time."""
    out = set()
    for i in range(L):
        for j in range(key_count):
            in_fg_key = fg_span[0] <= j < fg_span[1]
            in_bg_key = bg_span[0] <= j < bg_span[1]
            if (i in fg and in_fg_key) or (i not in fg and in_bg_key):
                out.add((i, j))
    return out


def self_blocked(L, fg, r):
    out = set()
    for i in range(L):
        for j in range(L):
            if (i in fg and j in r) or (i in r and j in fg):
                out.add((i, j))
    return out


def axis_angle(position, k, group, base):
    return position * math.pow(base, -2.0 * k / group)


def rotate(vec, coord, groups, base):
    """Rotate a head vector with complex arithmetic; groups = (ct, cy, cx)."""
    out = list(vec)
    offset = 0
    for axis, g in enumerate(groups):
        for k in range(g // 2):
            z = complex(vec[offset + 2 * k], vec[offset + 2 * k + 1])
            z *= cmath.exp(1j * axis_angle(coord[axis], k, g, base))
            out[offset + 2 * k], out[offset + 2 * k + 1] = z.real, z.imag
        offset += g
    return out


def matvec_rows(x, w):
    """x: list of rows (len D), w: D x E nested list -> rows of len E."""
    D, E = len(w), len(w[0])
    return [[sum(row[d] * w[d][e] for d in range(D)) for e in range(E)] for row in x]


def naive_attention(x, kv, wq, wk, wv, heads, blocked=None, q_coords=None, k_coords=None,
                    groups=None, base=10000.0):
    """Triple-loop multi-head attention; returns (output rows, probs[h][i][j]).

    ``blocked`` is a set of (i, j) pairs that get weight 0. Rotary is applied
    per head when coords are given.
    """
    q = matvec_rows(x, wq)
    k = matvec_rows(kv, wk)
    v = matvec_rows(kv, wv)
    D = len(q[0])
    hd = D // heads
    out = [[0.0] * D for _ in q]
    probs = []
    for h in range(heads):
        sl = slice(h * hd, (h + 1) * hd)
        qh = [row[sl] for row in q]
        kh = [row[sl] for row in k]
        if q_coords is not None:
            qh = [rotate(r, c, groups, base) for r, c in zip(qh, q_coords)]
            kh = [rotate(r, c, groups, base) for r, c in zip(kh, k_coords)]
        ph = []
        for i in range(len(qh)):
            scores = []
            for j in range(len(kh)):
                if blocked and (i, j) in blocked:
                    scores.append(None)
                else:
                    scores.append(sum(a * b for a, b in zip(qh[i], kh[j])) / math.sqrt(hd))
            live = [s for s in scores if s is not None]
            m = max(live)
            exps = [0.0 if s is None else math.exp(s - m) for s in scores]
            z = sum(exps)
            w = [e / z for e in exps]
            ph.append(w)
            for j, wij in enumerate(w):
                for c in range(hd):
                    out[i][h * hd + c] += wij * v[j][h * hd + c]
        probs.append(ph)
    return out, probs
