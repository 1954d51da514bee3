"""Lattice arithmetic shared by measures and grid functions.

Everything lives on cells ``C_k = [k*step, (k+1)*step)``. A measure is a set of
atoms plus cell masses spread uniformly within each cell; a function is stored
as its cell averages. Under that reading:

* cells x cells: the sum of two cell-uniform variables is triangular over two
  cells, so the discrete convolution is followed by the filter ``[1/2, 1/2]``;
* atom x cells: a shift by ``(s + f) * step`` sends ``1 - f`` of each cell to
  ``s`` cells over and ``f`` to ``s + 1`` (a two-point "spike");
* measure * function uses the same two rules.

All three operations are linear convolutions with fixed filters, so the algebra
is associative and commutative exactly, up to floating point.
"""

from __future__ import annotations

import numpy as np
from scipy import signal

SNAP = 1e-9


def spike(xs: np.ndarray, ws: np.ndarray, step: float) -> tuple[int, np.ndarray]:
    """Two-point lattice representation of atoms; returns ``(offset, weights)``."""
    xs = np.asarray(xs, dtype=float)
    ws = np.asarray(ws, dtype=float)
    if xs.size == 0:
        return 0, np.zeros(0)
    pos = xs / step
    s = np.floor(pos)
    f = pos - s
    up = f > 1 - SNAP
    s[up] += 1
    f[up] = 0.0
    f[f < SNAP] = 0.0
    s = s.astype(np.int64)
    off = int(s.min())
    arr = np.zeros(int(s.max()) - off + 2)
    np.add.at(arr, s - off, ws * (1 - f))
    np.add.at(arr, s - off + 1, ws * f)
    return off, arr


def halfsplit(c: np.ndarray) -> np.ndarray:
    """Apply the ``[1/2, 1/2]`` filter: ``out[j] = (c[j] + c[j-1]) / 2``."""
    out = np.zeros(len(c) + 1)
    out[:-1] += 0.5 * c
    out[1:] += 0.5 * c
    return out


def conv(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.size == 0 or b.size == 0:
        return np.zeros(0)
    return signal.convolve(a, b, method="auto")


def accumulate(parts: list[tuple[int, np.ndarray]]) -> tuple[int, np.ndarray]:
    """Sum arrays given with integer offsets into one ``(offset, array)``."""
    parts = [(o, a) for o, a in parts if a.size]
    if not parts:
        return 0, np.zeros(0)
    lo = min(o for o, _ in parts)
    hi = max(o + a.size for o, a in parts)
    out = np.zeros(hi - lo)
    for o, a in parts:
        out[o - lo : o - lo + a.size] += a
    return lo, out


def trim(k0: int, cells: np.ndarray, eps: float = 0.0) -> tuple[int, np.ndarray]:
    """Drop leading/trailing cells with ``|mass| <= eps``."""
    nz = np.flatnonzero(np.abs(cells) > eps)
    if nz.size == 0:
        return 0, np.zeros(0)
    return k0 + int(nz[0]), cells[nz[0] : nz[-1] + 1].copy()


def merge_atoms(xs, ws, rel: float = SNAP) -> tuple[np.ndarray, np.ndarray]:
    """Sort atoms and merge locations equal within ``rel * max(1, |x|)``."""
    xs = np.asarray(xs, dtype=float).ravel()
    ws = np.asarray(ws, dtype=float).ravel()
    keep = ws != 0
    xs, ws = xs[keep], ws[keep]
    if xs.size <= 1:
        return xs.copy(), ws.copy()
    order = np.argsort(xs, kind="stable")
    xs, ws = xs[order], ws[order]
    gap = np.diff(xs) > rel * np.maximum(1.0, np.abs(xs[1:]))
    group = np.concatenate([[0], np.cumsum(gap)])
    wsum = np.bincount(group, weights=ws)
    # weighted location keeps the first moment exact
    xw = np.bincount(group, weights=xs * ws)
    first = xs[np.concatenate([[0], np.flatnonzero(gap) + 1])]
    loc = np.where(wsum != 0, xw / np.where(wsum != 0, wsum, 1.0), first)
    return loc, wsum


def extend(g0: int, g: np.ndarray, lo: int, hi: int, mode: str) -> np.ndarray:
    """Values of a cell function on cells ``[lo, hi)``; outside ``[g0, g0+len)`` use ``mode``."""
    out = np.zeros(hi - lo) if mode == "zero" else np.empty(hi - lo)
    if mode == "edge":
        idx = np.clip(np.arange(lo, hi) - g0, 0, len(g) - 1)
        return g[idx].astype(float)
    a, b = max(lo, g0), min(hi, g0 + len(g))
    if b > a:
        out[a - lo : b - lo] = g[a - g0 : b - g0]
    return out


def measure_apply(
    atoms_x, atoms_w, k0: int, cells: np.ndarray, step: float,
    g0: int, g: np.ndarray, out_lo: int, out_hi: int, mode: str = "zero",
) -> np.ndarray:
    """Cell averages of ``t -> integral g(t - x) mu(dx)`` on cells ``[out_lo, out_hi)``."""
    n_out = out_hi - out_lo
    result = np.zeros(n_out)
    terms = []
    if len(cells):
        terms.append((k0, cells, True))
    if len(atoms_x):
        s0, sp = spike(atoms_x, atoms_w, step)
        terms.append((s0, sp, False))
    for m0, marr, split in terms:
        # out[k] needs g at k - l - 1 .. k - l for l in [m0, m0 + len)
        lo = out_lo - (m0 + len(marr)) - 1
        hi = out_hi - m0 + 1
        gx = extend(g0, g, lo, hi, mode)
        c = conv(marr, gx)
        if split:
            c = halfsplit(c)
        # c index 0 corresponds to cell m0 + lo
        start = out_lo - (m0 + lo)
        result += c[start : start + n_out]
    return result
