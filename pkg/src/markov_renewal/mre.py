"""Markov renewal equations ``Z = z + (Q (x) F) * Z`` on a grid.

Functions on ``S x R`` are stored as cell averages over a window. The solution
``Z* = V * z`` is a grid convolution with the renewal measure; diagnostics cover
direct Riemann integrability, fixed-point residuals, the ``Z* + c v`` family and
the homogeneous (Choquet-Deny) equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from . import _grid
from .errors import ValidationError, WindowTooSmall
from .kernel import KernelStats, SemiMarkovKernel
from .perron import PerronData
from .renewal import GridMeasure, _window_cells

GAUSS_NODES = 4


class GridFunction:
    """Vector of real functions ``(Z_1, ..., Z_m)`` as cell averages on a window.

    Parameters
    ----------
    window : (float, float)
    step : float
    values : ndarray, shape (m, n_cells)
        ``values[i, k]`` is the average of ``Z_i`` over cell ``k0 + k``.
    source : callable, optional
        ``source(i, t)``; kept for tail integrals and integrability checks.
    """

    def __init__(self, window, step, values, source: Callable | None = None,
                 flags: dict | None = None):
        self.window = (float(window[0]), float(window[1]))
        self.step = float(step)
        self.k0, k1 = _window_cells(self.window, self.step)
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if values.shape[1] != k1 - self.k0:
            raise ValidationError(f"expected {k1 - self.k0} cells per state, got {values.shape[1]}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("grid function has non-finite values")
        self.values = values
        self.source = source
        self.flags = dict(flags or {})

    # -- constructors --------------------------------------------------------

    @classmethod
    def from_callable(cls, fn: Callable, m: int, window, step: float,
                      nodes: int = GAUSS_NODES) -> "GridFunction":
        """Cell averages of ``fn(i, t)`` by Gauss-Legendre quadrature in each cell."""
        k0, k1 = _window_cells(window, step)
        x, w = np.polynomial.legendre.leggauss(nodes)
        left = np.arange(k0, k1) * step
        pts = left[:, None] + 0.5 * step * (x[None, :] + 1.0)
        vals = np.empty((m, k1 - k0))
        for i in range(m):
            vals[i] = (np.asarray(fn(i, pts), dtype=float) * w).sum(axis=1) / 2.0
        return cls(window, step, vals, source=fn)

    @classmethod
    def constant(cls, c, window, step: float) -> "GridFunction":
        c = np.atleast_1d(np.asarray(c, dtype=float))
        k0, k1 = _window_cells(window, step)
        return cls(window, step, np.repeat(c[:, None], k1 - k0, axis=1),
                   source=lambda i, t: np.full(np.shape(t), c[i]))

    @classmethod
    def zeros(cls, m: int, window, step: float) -> "GridFunction":
        return cls.constant(np.zeros(m), window, step)

    # -- views and arithmetic --------------------------------------------------

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n_cells(self) -> int:
        return self.values.shape[1]

    @property
    def cell_left(self) -> np.ndarray:
        return (self.k0 + np.arange(self.n_cells)) * self.step

    @property
    def t(self) -> np.ndarray:
        """Cell midpoints."""
        return self.cell_left + 0.5 * self.step

    def cell_values(self) -> np.ndarray:
        return self.values

    def _same_grid(self, other: "GridFunction") -> None:
        if self.k0 != other.k0 or self.n_cells != other.n_cells or abs(self.step - other.step) > 1e-15:
            raise ValidationError("grid functions live on different grids")

    def _new(self, values, source=None) -> "GridFunction":
        return GridFunction(self.window, self.step, values, source)

    def __add__(self, other):
        if isinstance(other, GridFunction):
            self._same_grid(other)
            src = None
            if self.source is not None and other.source is not None:
                a, b = self.source, other.source
                src = lambda i, t: a(i, t) + b(i, t)  # noqa: E731
            return self._new(self.values + other.values, src)
        return self._new(self.values + np.asarray(other, dtype=float).reshape(-1, 1))

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            return self + other.scaled(-1.0)
        return self + (-np.asarray(other, dtype=float))

    def scaled(self, c) -> "GridFunction":
        c = np.asarray(c, dtype=float)
        fac = c.reshape(-1, 1) if c.ndim else c
        src = None
        if self.source is not None:
            s = self.source
            src = (lambda i, t: s(i, t) * (c[i] if c.ndim else c))  # noqa: E731
        return self._new(self.values * fac, src)

    def plus_multiple(self, c: float, v: np.ndarray) -> "GridFunction":
        """``Z + c v`` with ``v`` a vector constant in ``t``."""
        return self + c * np.asarray(v, dtype=float)

    def mask(self, lo: float, hi: float) -> np.ndarray:
        """Boolean cell mask of cells lying in ``[lo, hi]``."""
        left = self.cell_left
        return (left >= lo - 1e-9) & (left + self.step <= hi + 1e-9)

    def integral(self, tails: bool = True) -> np.ndarray:
        """``int Z_i`` per state: cell sums plus quadrature tails when ``source`` is known."""
        out = self.values.sum(axis=1) * self.step
        if tails and self.source is not None:
            a, b = self.window
            for i in range(self.m):
                f = lambda x, i=i: float(np.asarray(self.source(i, np.array([x])))[0])  # noqa: E731
                left, _ = integrate.quad(f, -np.inf, a, limit=200)
                right, _ = integrate.quad(f, b, np.inf, limit=200)
                out[i] += left + right
        return out

    def to_csv(self, path, extra: dict | None = None) -> None:
        with open(path, "w") as fh:
            cols = ["t"] + [f"Z_{i + 1}" for i in range(self.m)]
            fh.write(",".join(cols) + "\n")
            for k, t in enumerate(self.t):
                row = [f"{t:.12g}"] + [f"{self.values[i, k]:.12g}" for i in range(self.m)]
                fh.write(",".join(row) + "\n")

    def __repr__(self):
        return f"GridFunction(m={self.m}, window={self.window}, step={self.step:g})"


# --- kernel and measure actions ------------------------------------------------------


def _apply_measure(mu, Z: GridFunction, j: int, lo: int, hi: int, mode: str) -> np.ndarray:
    return _grid.measure_apply(mu.atoms_x, mu.atoms_w, mu.k0, mu.cells, Z.step,
                               Z.k0, Z.values[j], lo, hi, mode)


def apply_kernel(K: SemiMarkovKernel, Z: GridFunction, mode: str = "edge",
                 weights: np.ndarray | None = None) -> GridFunction:
    """``((Q (x) F) * Z)_i = sum_k q_ik int Z_k(t - x) F_ik(dx)`` on ``Z``'s window.

    Values of ``Z`` outside its window are extended by ``mode``: ``"edge"``
    (constant continuation) or ``"zero"``.
    """
    if abs(K.step - Z.step) > 1e-12 * K.step:
        from .errors import GridMismatch

        raise GridMismatch(f"kernel step {K.step} != function step {Z.step}")
    W = K.weights if weights is None else np.asarray(weights, dtype=float)
    lo, hi = Z.k0, Z.k0 + Z.n_cells
    out = np.zeros_like(Z.values)
    for i in range(K.m):
        for k in range(K.m):
            if W[i, k] > 0:
                out[i] += W[i, k] * _apply_measure(K.dists[i][k], Z, k, lo, hi, mode)
    return GridFunction(Z.window, Z.step, out)


def renewal_apply(V: GridMeasure, z: GridFunction, out_window=None) -> GridFunction:
    """``(V * z)_i = sum_j int z_j(t - x) V_ij(dx)``; ``z`` is taken as 0 outside its window."""
    out_window = z.window if out_window is None else out_window
    lo, hi = _window_cells(out_window, z.step)
    vals = np.zeros((V.m, hi - lo))
    for i in range(V.m):
        for j in range(V.m):
            vals[i] += _apply_measure(V[i, j], z, j, lo, hi, "zero")
    return GridFunction(out_window, z.step, vals)


# --- diagnostics --------------------------------------------------------------------


@dataclass
class DriReport:
    dri: bool
    sup_sum: float
    spread_out_ok: bool
    l1: float
    window_only: bool
    notes: list[str] = field(default_factory=list)


def _tail_increments(fn, m, weights, start: float, eps: float, sign: int, n_doublings: int,
                     blocks: int = 2048, per_block: int = 8):
    """Sup-sum and L1 increments over ``[T, 2T]`` shells for ``T = start * 2^k``."""
    sup_inc, l1_inc, tail_max = [], [], []
    T = start
    for _ in range(n_doublings):
        edges = np.linspace(T, 2 * T, blocks + 1)
        pts = edges[:-1, None] + (edges[1] - edges[0]) * np.linspace(0, 1, per_block)[None, :]
        s = l = mx = 0.0
        for i in range(m):
            g = np.abs(np.asarray(fn(i, sign * pts), dtype=float))
            s += weights[i] * float((g.max(axis=1) * (edges[1] - edges[0]) / eps).sum())
            l += weights[i] * float((g.mean(axis=1) * (edges[1] - edges[0])).sum())
            mx = max(mx, float(g[-1].max()))
        sup_inc.append(s)
        l1_inc.append(l)
        tail_max.append(mx)
        T *= 2
    return np.array(sup_inc), np.array(l1_inc), np.array(tail_max)


def _converges(inc: np.ndarray, total: float) -> bool:
    last = inc[-3:]
    if last.max() <= 1e-9 * max(total, 1e-300):
        return True
    ratios = last[1:] / np.maximum(last[:-1], 1e-300)
    return bool(np.all(ratios < 0.9))


def dri_check(g: GridFunction, weights, eps: float | None = None,
              n_doublings: int = 30) -> DriReport:
    """Direct Riemann integrability of ``g`` weighted by ``weights`` (``u`` or ``pi``).

    On the window the sup-sum uses mesh ``eps`` (default the grid step). When
    ``g.source`` is known the tails are probed on doubling shells ``[T, 2T]``: the
    function passes when shell contributions decay geometrically or vanish. Without
    a source only the window can be inspected and the result carries
    ``window_only=True``. The spread-out conditions (bounded, vanishing at
    infinity, integrable) are reported as ``spread_out_ok``. Almost-everywhere
    continuity is assumed, not checked.
    """
    w = np.asarray(weights, dtype=float)
    eps = g.step if eps is None else float(eps)
    ratio = max(1, int(round(eps / g.step)))
    absv = np.abs(g.values)
    n = (g.n_cells // ratio) * ratio
    blocks = absv[:, :n].reshape(g.m, -1, ratio).max(axis=2)
    sup_sum = float((w[:, None] * blocks).sum())
    l1 = float((w[:, None] * absv).sum() * g.step)
    notes = []
    if g.source is None:
        peak = max(absv.max(), 1e-300)
        edge = max(2, g.n_cells // 50)
        ok = absv[:, :edge].max() <= 1e-8 * peak and absv[:, -edge:].max() <= 1e-8 * peak
        notes.append("certified on the window only")
        return DriReport(bool(ok), sup_sum, bool(ok), l1, True, notes)
    a, b = g.window
    right = _tail_increments(g.source, g.m, w, max(b, 1.0), eps, 1, n_doublings)
    left = _tail_increments(g.source, g.m, w, max(-a, 1.0), eps, -1, n_doublings)
    sup_total = sup_sum + right[0].sum() + left[0].sum()
    l1_total = l1 + right[1].sum() + left[1].sum()
    dri = _converges(right[0], sup_total) and _converges(left[0], sup_total)
    peak = max(absv.max(), right[2].max(), left[2].max(), 1e-300)
    vanish = right[2][-1] <= 1e-6 * peak and left[2][-1] <= 1e-6 * peak
    l1_ok = _converges(right[1], l1_total) and _converges(left[1], l1_total)
    if not dri:
        notes.append("sup-sum over doubling shells does not decay")
    if not l1_ok:
        notes.append("L1 norm over doubling shells does not decay")
    return DriReport(dri, sup_total, bool(vanish and l1_ok), l1_total, False, notes)


def _required_span(z: GridFunction, out_window):
    # round-off from FFT convolution is not support
    floor = 1e-14 * float(np.abs(z.values).max(initial=0.0))
    nz = np.flatnonzero(np.any(np.abs(z.values) > floor, axis=0))
    if nz.size == 0:
        return None
    za = (z.k0 + nz[0]) * z.step
    zb = (z.k0 + nz[-1] + 1) * z.step
    return out_window[0] - zb, out_window[1] - za


def solve_mre(K: SemiMarkovKernel, pd: PerronData, V: GridMeasure, z: GridFunction,
              out_window=None, check_window: bool = True) -> GridFunction:
    """``Z* = V * z``, the solution of ``Z = z + (Q (x) F) * Z`` vanishing at ``-inf``.

    Raises WindowTooSmall when ``V`` does not extend far enough right to cover
    ``t - x`` for ``t`` in the output window and ``x`` in the support of ``z``, or
    when it is cut on the left while still carrying mass there.
    """
    out_window = z.window if out_window is None else tuple(out_window)
    span = _required_span(z, out_window)
    if span is None:
        return GridFunction.zeros(K.m, out_window, z.step)
    if check_window:
        tol = 1e-9 * max(1.0, abs(span[1]))
        if V.window[1] < span[1] - V.step - tol:
            raise WindowTooSmall(
                f"renewal measure window ends at {V.window[1]:g}; need at least {span[1]:g}")
        if V.window[0] > span[0] + tol:
            cut = max(V[i, j].under for i in range(V.m) for j in range(V.m))
            if cut > 1e-8:
                raise WindowTooSmall(
                    f"renewal measure window starts at {V.window[0]:g} but has mass {cut:.3g} "
                    f"to its left; need coverage down to {span[0]:g}")
    Z = renewal_apply(V, z, out_window)
    Z.flags.update(class_flags(Z, pd))
    return Z


def class_flags(Z: GridFunction, pd: PerronData, tol: float = 1e-6) -> dict:
    """Window-level membership flags for the classes L, L0 and C_b of ``Z``.

    ``L``: ``Z_i / v_i`` bounded and small at the left edge. ``C_b`` additionally
    asks for no cell-to-cell jumps much larger than the grid step suggests. These
    are certified on the window only.
    """
    Zh = Z.values / pd.v[:, None]
    bounded = bool(np.all(np.isfinite(Zh)))
    scale = max(np.abs(Zh).max(), 1e-300)
    edge = max(1, Z.n_cells // 100)
    left_small = bool(np.abs(Zh[:, :edge]).max() <= tol * scale + tol)
    jumps = np.abs(np.diff(Zh, axis=1)).max() if Z.n_cells > 1 else 0.0
    continuous = bool(jumps <= max(0.05 * scale, 50 * Z.step * scale))
    return {"L": bounded and left_small, "L0": bounded and left_small,
            "C_b": bounded and continuous, "window_only": True}


@dataclass
class Residual:
    per_state: np.ndarray
    sup: float
    interior: tuple[float, float]


def default_interior(K: SemiMarkovKernel, window) -> tuple[float, float]:
    """Window part where ``t - x`` stays inside for the negative support of the kernel."""
    neg = 0.0
    for i, j in K.edges():
        lo, _ = K.dists[i][j].support()
        neg = max(neg, -lo)
    a, b = window
    return a, b - neg


def residual(Z: GridFunction, z: GridFunction | None, K: SemiMarkovKernel,
             interior=None, mode: str = "edge") -> Residual:
    """Sup norm of ``Z - z - (Q (x) F) * Z`` over the interior of the window.

    ``z=None`` gives the homogeneous residual. ``Z`` is continued by ``mode`` outside
    its window; the default interior excludes the part of the right edge reached by
    negative increments.
    """
    interior = default_interior(K, Z.window) if interior is None else tuple(interior)
    KZ = apply_kernel(K, Z, mode)
    R = Z.values - KZ.values
    if z is not None:
        z._same_grid(Z)
        R = R - z.values
    sel = Z.mask(*interior)
    if not sel.any():
        raise WindowTooSmall(f"interior {interior} contains no cells")
    per = np.abs(R[:, sel]).max(axis=1)
    return Residual(per, float(per.max()), interior)


@dataclass
class ProbeReport:
    c: float
    trace: np.ndarray
    homogeneous_residual: float
    iterates: list[GridFunction] = field(default_factory=list, repr=False)


def homogeneous_probe(Z: GridFunction, K: SemiMarkovKernel, pd: PerronData, n_iter: int = 50,
                      interior=None, keep: bool = False) -> ProbeReport:
    """Decay trace for the homogeneous equation ``Z = (Q (x) F) * Z``.

    Fits ``c`` by pi-weighted least squares against ``v``; then iterates
    ``Delta_k = (P (x) F)^{*k} * D^{-1}(Z - c v)`` (zero outside the window) and
    records ``sup |Delta_k|`` over the interior. Also returns the homogeneous
    residual of ``Z`` itself.
    """
    interior = default_interior(K, Z.window) if interior is None else tuple(interior)
    sel = Z.mask(*interior)
    w = pd.pi[:, None] * np.ones((1, int(sel.sum())))
    vv = pd.v[:, None]
    c = float((w * vv * Z.values[:, sel]).sum() / (w * vv * vv).sum())
    H = K.harmonic(pd)
    D = GridFunction(Z.window, Z.step, (Z.values - c * vv) / vv)
    trace = [float(np.abs(D.values[:, sel]).max())]
    its = [D] if keep else []
    for _ in range(n_iter):
        D = apply_kernel(H, D, "zero")
        trace.append(float(np.abs(D.values[:, sel]).max()))
        if keep:
            its.append(D)
    hres = residual(Z, None, K, interior).sup
    return ProbeReport(c, np.array(trace), hres, its)


def asymptotic_limit(z: GridFunction, pd: PerronData, stats: KernelStats,
                     tails: bool = True) -> np.ndarray:
    """``lim_{t->inf} (V * z)_i = (v_i / mu) sum_j u_j int z_j``."""
    ints = z.integral(tails)
    return pd.v / stats.mu * float(pd.u @ ints)


def right_edge_value(Z: GridFunction, fraction: float = 0.05) -> np.ndarray:
    """Average of each ``Z_i`` over the last ``fraction`` of the window."""
    n = max(1, int(fraction * Z.n_cells))
    return Z.values[:, -n:].mean(axis=1)
