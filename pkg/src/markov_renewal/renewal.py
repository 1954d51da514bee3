"""Matrix renewal measures on a window, pre-return occupation measures and limit diagnostics.

The renewal measure is the series ``sum_n (Q (x) F)^{*n}``. It is built row by row:
starting from ``delta_0`` in state ``i`` the ``n``-th term is pushed one step by
``new_j = sum_k cur_k * q_kj F_kj``. Terms live on a padded computational window so
that mass which briefly leaves the reporting window and comes back is not lost.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArithmeticKernel, NotSpreadOut, TruncationFailure, ValidationError
from .kernel import KernelStats, Measure, SemiMarkovKernel, lattice_type, stationary_drift
from .perron import PerronData

EPS_TRUNC = 1e-8
MIN_TERMS = 16
MAX_TERMS = 20_000
CONSECUTIVE = 3


@dataclass
class TruncationReport:
    n_terms: int
    residual: float
    dropped: float = 0.0
    history: list[float] = field(default_factory=list)


def cumulative(mu: Measure, x: np.ndarray, closed: bool = True) -> np.ndarray:
    """``mu((-inf, x])`` (``closed``) or ``mu((-inf, x))`` over the core part, vectorized."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    if mu.cells.size:
        edges = (mu.k0 + np.arange(mu.cells.size + 1)) * mu.step
        cum = np.concatenate([[0.0], np.cumsum(mu.cells)])
        out += np.interp(x, edges, cum, left=0.0, right=cum[-1])
    if mu.atoms_x.size:
        tol = 1e-9 * np.maximum(1.0, np.abs(x))
        acum = np.concatenate([[0.0], np.cumsum(mu.atoms_w)])
        probe = x + tol if closed else x - tol
        out += acum[np.searchsorted(mu.atoms_x, probe, side="right")]
    return out


def slab_masses(mu: Measure, t: np.ndarray, h: float, closed: str = "right") -> np.ndarray:
    """Masses of ``(t, t+h]`` (``closed="right"``) or ``[t, t+h]`` (``"both"``) for each ``t``."""
    t = np.asarray(t, dtype=float)
    if closed == "right":
        return cumulative(mu, t + h, True) - cumulative(mu, t, True)
    if closed == "both":
        return cumulative(mu, t + h, True) - cumulative(mu, t, False)
    if closed == "left":
        return cumulative(mu, t + h, False) - cumulative(mu, t, False)
    raise ValidationError(f"unknown interval convention {closed!r}")


class GridMeasure:
    """An ``m x m`` array of measures on a common window ``[a, b]``.

    Parameters
    ----------
    window : tuple of float
        Reporting window; values outside it are not meaningful.
    entries : list of list of Measure
        ``entries[i][j]`` is the ``(i, j)`` measure, restricted to the window.
    kind : str
        ``"V"``, ``"U"`` or ``"taboo"``; informational.
    """

    def __init__(self, window, step, entries, report: TruncationReport | None = None,
                 kind: str = "V"):
        self.window = (float(window[0]), float(window[1]))
        self.step = float(step)
        self.entries = entries
        self.report = report
        self.kind = kind

    @property
    def m(self) -> int:
        return len(self.entries)

    def __getitem__(self, ij) -> Measure:
        i, j = ij
        return self.entries[i][j]

    def slab(self, i: int, j: int, t, h: float, closed: str = "right"):
        """Mass of ``(t, t+h]`` (or another convention) for entry ``(i, j)``."""
        out = slab_masses(self.entries[i][j], np.atleast_1d(t), h, closed)
        return out if np.ndim(t) else float(out[0])

    def totals(self) -> np.ndarray:
        return np.array([[e.core_total for e in row] for row in self.entries])

    def density(self, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        """``(cell_left, cell_mass / step)`` of the absolutely continuous part."""
        e = self.entries[i][j]
        return e.cell_left, e.cells / self.step

    def scaled(self, factors: np.ndarray, kind: str | None = None) -> "GridMeasure":
        entries = [[self.entries[i][j].scaled(factors[i, j]) for j in range(self.m)]
                   for i in range(self.m)]
        return GridMeasure(self.window, self.step, entries, self.report, kind or self.kind)

    def rows(self):
        """Yield ``(i, j, cell_left, cell_right, mass, atom_flag)`` rows, atoms first."""
        for i in range(self.m):
            for j in range(self.m):
                e = self.entries[i][j]
                for x, w in zip(e.atoms_x, e.atoms_w):
                    yield (i + 1, j + 1, x, x, w, 1)
                left = e.cell_left
                for a, w in zip(left, e.cells):
                    if w != 0:
                        yield (i + 1, j + 1, a, a + self.step, w, 0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "j", "cell_left", "cell_right", "mass", "atom_flag"])
            for i, j, a, b, mass, flag in self.rows():
                w.writerow([i, j, f"{a:.12g}", f"{b:.12g}", f"{mass:.12g}", flag])

    def __repr__(self):
        return f"GridMeasure(kind={self.kind}, m={self.m}, window={self.window}, step={self.step:g})"


# --- series engine ----------------------------------------------------------------


def _window_cells(window, step) -> tuple[int, int]:
    a, b = window
    if not b > a:
        raise ValidationError(f"window must satisfy a < b, got {window}")
    return math.floor(a / step + 1e-9), math.ceil(b / step - 1e-9)


def _padding(K: SemiMarkovKernel, window) -> float:
    width = 0.0
    for i, j in K.edges():
        lo, hi = K.dists[i][j].support()
        width = max(width, hi - lo, abs(lo), abs(hi))
    return 2.0 * width + 0.25 * (window[1] - window[0])


def _restrict_window(mu: Measure, window, step) -> Measure:
    """Cells inside the window; atoms in the closed window. Cut mass goes to ``under``/``over``."""
    a, b = window
    ka, kb = _window_cells(window, step)
    tol = 1e-9 * max(1.0, abs(a), abs(b))
    below = mu.atoms_x < a - tol
    above = mu.atoms_x > b + tol
    keep = ~(below | above)
    cells = mu.restrict(ka, kb)
    idx = mu.k0 + np.arange(mu.cells.size)
    under = mu.under + mu.atoms_w[below].sum() + mu.cells[idx < ka].sum()
    over = mu.over + mu.atoms_w[above].sum() + mu.cells[idx >= kb].sum()
    return Measure(step, mu.atoms_x[keep], mu.atoms_w[keep], cells.k0, cells.cells, under, over)


def _row_series(K: SemiMarkovKernel, start: int, window, *, eps: float, rule: str,
                min_terms: int, max_terms: int, n_terms: int | None, blocked: int | None = None,
                pad: float | None = None):
    """Row ``start`` of ``sum_n A^{*n}``; ``blocked`` removes transitions into that state."""
    m, step = K.m, K.step
    pad = _padding(K, window) if pad is None else pad
    lo_k, hi_k = _window_cells((window[0] - pad, window[1] + pad), step)
    entries = [[K.entry(k, j) if (K.weights[k, j] > 0 and j != blocked) else None
                for j in range(m)] for k in range(m)]
    cur = [Measure(step) for _ in range(m)]
    cur[start] = Measure(step, [0.0], [1.0])
    acc = list(cur)
    history: list[float] = []
    quiet = 0
    n = 0
    residual = 0.0
    while True:
        if n_terms is not None and n >= n_terms:
            break
        if n_terms is None and n >= max_terms:
            raise TruncationFailure(
                f"renewal series did not settle within {max_terms} terms "
                f"(last residual {residual:.3e}); drift too small for the window")
        n += 1
        new = []
        for j in range(m):
            mu = Measure(step)
            for k in range(m):
                if entries[k][j] is not None and cur[k].total > 0:
                    mu = mu.plus(cur[k].convolve(entries[k][j]))
            new.append(mu.restrict(lo_k, hi_k))
        cur = new
        acc = [acc[j].plus(cur[j]) for j in range(m)]
        if rule == "total":
            residual = sum(c.total for c in cur)
        else:
            residual = sum(c.mass_between(-np.inf, window[1], "both") + c.under for c in cur)
        history.append(residual)
        quiet = quiet + 1 if residual < eps else 0
        if n_terms is None and quiet >= CONSECUTIVE and n >= min_terms:
            break
    dropped = sum(c.under + c.over for c in acc)
    return acc, TruncationReport(n, residual, dropped, history)


def _series(K, window, kind, eps, min_terms, max_terms, n_terms, rule="window") -> GridMeasure:
    runs = [_row_series(K, i, window, eps=eps, rule=rule, min_terms=min_terms,
                        max_terms=max_terms, n_terms=n_terms) for i in range(K.m)]
    n_used = max(rep.n_terms for _, rep in runs)
    # every row gets the same series length so that V and U stay exactly comparable
    runs = [run if run[1].n_terms == n_used else
            _row_series(K, i, window, eps=eps, rule=rule, min_terms=min_terms,
                        max_terms=max_terms, n_terms=n_used)
            for i, run in enumerate(runs)]
    rows = [[_restrict_window(mu, window, K.step) for mu in acc] for acc, _ in runs]
    res = max(rep.residual for _, rep in runs)
    dropped = max(rep.dropped for _, rep in runs)
    return GridMeasure(window, K.step, rows, TruncationReport(n_used, res, dropped), kind)


def renewal_measure(K: SemiMarkovKernel, pd: PerronData, stats: KernelStats | None = None,
                    window=(-10.0, 60.0), eps_trunc: float = EPS_TRUNC, *,
                    min_terms: int = MIN_TERMS, max_terms: int = MAX_TERMS,
                    n_terms: int | None = None) -> GridMeasure:
    """Matrix renewal measure ``V = sum_n (Q (x) F)^{*n}`` on ``window``.

    Terms are added until the ``n``-step mass on ``(-inf, b]`` stays below
    ``eps_trunc`` for three consecutive ``n`` (and ``n >= min_terms``). Passing
    ``n_terms`` forces a fixed series length instead.

    Raises
    ------
    NonPositiveDrift
        If the stationary drift is not positive.
    TruncationFailure
        If ``max_terms`` terms do not clear the window.
    """
    if stats is None:
        stats = stationary_drift(K, pd)
    elif not stats.mu > 0:
        stationary_drift(K, pd)
    return _series(K, window, "V", eps_trunc, min_terms, max_terms, n_terms)


def markov_renewal_measure(K: SemiMarkovKernel, pd: PerronData, window=(-10.0, 60.0),
                           eps_trunc: float = EPS_TRUNC, **kw) -> GridMeasure:
    """``U``: the renewal measure of the harmonic transform ``P (x) F``."""
    stationary_drift(K, pd)
    H = K.harmonic(pd)
    G = _series(H, window, "U", eps_trunc, kw.get("min_terms", MIN_TERMS),
                kw.get("max_terms", MAX_TERMS), kw.get("n_terms"))
    return G


def uv_transform(M: GridMeasure, pd: PerronData, direction: str = "U->V") -> GridMeasure:
    """Rescale ``V_ij = (v_i / v_j) U_ij`` (``"U->V"``) or the inverse (``"V->U"``)."""
    v = pd.v
    ratio = v[:, None] / v[None, :]
    if direction == "U->V":
        return M.scaled(ratio, "V")
    if direction == "V->U":
        return M.scaled(1.0 / ratio, "U")
    raise ValidationError(f"direction must be 'U->V' or 'V->U', got {direction!r}")


def taboo_occupation(K: SemiMarkovKernel, pd: PerronData | None, i: int, window=(-10.0, 60.0),
                     eps_trunc: float = 1e-12, *, stochastic: bool = False,
                     max_terms: int = MAX_TERMS) -> GridMeasure:
    """Pre-return occupation measure of state ``i`` for the harmonic transform.

    Row ``i`` of ``sum_n T^{*n}`` where ``T`` is ``P (x) F`` with every transition into
    ``i`` removed. ``entries[i][j]`` holds it; the other rows are zero. Its total mass
    in state ``j`` is ``pi_j / pi_i``. Set ``stochastic=True`` when ``K`` already has
    stochastic weights.
    """
    H = K if stochastic else K.harmonic(pd)
    acc, rep = _row_series(H, i, window, eps=eps_trunc, rule="total", min_terms=1,
                           max_terms=max_terms, n_terms=None, blocked=i,
                           pad=_padding(H, window))
    rows = [[Measure(K.step) for _ in range(K.m)] for _ in range(K.m)]
    rows[i] = acc
    return GridMeasure(window, K.step, rows, rep, "taboo")


def taboo_totals(P: np.ndarray, i: int) -> np.ndarray:
    """Exact expected visits to each state before the first return to ``i``."""
    P = np.asarray(P, dtype=float)
    m = P.shape[0]
    T = P.copy()
    T[:, i] = 0.0
    e = np.zeros(m)
    e[i] = 1.0
    return np.linalg.solve(np.eye(m) - T.T, e)


@dataclass
class LocalBoundReport:
    ratios: np.ndarray
    sup_slab: np.ndarray
    bound: np.ndarray

    @property
    def max_ratio(self) -> float:
        return float(np.nanmax(self.ratios))

    @property
    def ok(self) -> bool:
        return self.max_ratio <= 1 + 1e-9


def _breakpoints(mu: Measure, h: float) -> np.ndarray:
    pts = [mu.atoms_x, mu.atoms_x - h]
    if mu.cells.size:
        edges = (mu.k0 + np.arange(mu.cells.size + 1)) * mu.step
        pts += [edges, edges - h]
    return np.unique(np.concatenate(pts)) if pts else np.zeros(0)


def local_bound_check(U: GridMeasure, pi: np.ndarray, h: float, i: int | None = None) -> LocalBoundReport:
    """Check ``sup_t U_ij([t, t+h]) <= (pi_j / pi_i) U_ii([-h, h])`` for every entry.

    The sup is taken over the slab breakpoints (atom and cell-edge positions), where
    the piecewise-linear slab-mass function attains its maximum.
    """
    pi = np.asarray(pi, dtype=float)
    m = U.m
    rows = range(m) if i is None else [i]
    ratios = np.full((m, m), np.nan)
    sups = np.full((m, m), np.nan)
    bounds = np.full((m, m), np.nan)
    for r in rows:
        base = float(slab_masses(U[r, r], np.array([-h]), 2 * h, "both")[0])
        for j in range(m):
            mu = U[r, j]
            ts = _breakpoints(mu, h)
            ts = ts[(ts >= U.window[0]) & (ts + h <= U.window[1])]
            s = float(slab_masses(mu, ts, h, "both").max()) if ts.size else 0.0
            b = pi[j] / pi[r] * base
            sups[r, j], bounds[r, j] = s, b
            ratios[r, j] = s / b if b > 0 else (0.0 if s == 0 else np.inf)
    return LocalBoundReport(ratios, sups, bounds)


@dataclass
class BlackwellRow:
    i: int
    j: int
    increment: float
    limit: float
    abs_error: float
    left_increment: float


def _right_quarter(window, h):
    a, b = window
    return b - 0.25 * (b - a), b - h


def blackwell_check(V: GridMeasure, pd: PerronData, stats: KernelStats, h: float = 1.0,
                    t_eval=None, lattice=None) -> list[BlackwellRow]:
    """Compare ``V_ij((t, t+h])`` near the right edge with ``v_i u_j h / mu``.

    ``t_eval`` defaults to a sweep of the right quarter of the window; the worst
    deviation over the sweep is reported. Left-edge increments are measured over the
    first ``h`` units of the window.

    Raises ArithmeticKernel when ``lattice`` (or ``stats.lattice``) is arithmetic.
    """
    lat = lattice if lattice is not None else stats.lattice
    if lat is not None and lat.arithmetic:
        raise ArithmeticKernel(
            f"kernel is {lat}; use arithmetic_blackwell_check with span multiples")
    a, _ = V.window
    if t_eval is None:
        lo, hi = _right_quarter(V.window, h)
        t_eval = np.linspace(lo, hi, 201)
    t_eval = np.atleast_1d(np.asarray(t_eval, dtype=float))
    out = []
    for i in range(V.m):
        for j in range(V.m):
            lim = pd.v[i] * pd.u[j] * h / stats.mu
            inc = V.slab(i, j, t_eval, h)
            k = int(np.argmax(np.abs(inc - lim)))
            left = float(V.slab(i, j, np.array([a]), h)[0])
            out.append(BlackwellRow(i, j, float(inc[k]), lim, float(abs(inc[k] - lim)), left))
    return out


def arithmetic_blackwell_check(V: GridMeasure, pd: PerronData, stats: KernelStats, lattice,
                               n_tail: int = 3) -> list[BlackwellRow]:
    """Arithmetic counterpart: atoms of ``V_ij`` at ``gamma_j - gamma_i + n d`` tend to
    ``d v_i u_j / mu``. The last ``n_tail`` lattice points inside the window are averaged."""
    if lattice is None or not lattice.arithmetic:
        raise ValidationError("arithmetic_blackwell_check needs an arithmetic lattice type")
    d, g = lattice.d, lattice.gamma
    a, b = V.window
    out = []
    for i in range(V.m):
        for j in range(V.m):
            off = g[j] - g[i]
            n_hi = math.floor((b - off) / d + 1e-9)
            pts = off + d * np.arange(n_hi - n_tail + 1, n_hi + 1)
            masses = slab_masses(V[i, j], pts, 0.0, "both")
            lim = d * pd.v[i] * pd.u[j] / stats.mu
            n_lo = math.ceil((a - off) / d - 1e-9)
            left = float(slab_masses(V[i, j], np.array([off + d * n_lo]), 0.0, "both")[0])
            inc = float(masses.mean())
            out.append(BlackwellRow(i, j, inc, lim, abs(inc - lim), left))
    return out


@dataclass
class StoneDiagnostics:
    t: np.ndarray
    density: list[list[np.ndarray]]
    right_estimate: np.ndarray
    left_estimate: np.ndarray
    limit: np.ndarray

    @property
    def rel_error(self) -> np.ndarray:
        return np.abs(self.right_estimate - self.limit) / self.limit

    @property
    def nonnegative(self) -> bool:
        return all(np.all(d >= 0) for row in self.density for d in row)


def stone_density(V: GridMeasure, pd: PerronData, stats: KernelStats, K: SemiMarkovKernel | None = None,
                  edge_fraction: float = 0.25) -> StoneDiagnostics:
    """Density of the absolutely continuous part of ``V`` with edge-limit estimates.

    Atoms (the singular part) are set aside; the density is ``cell mass / step`` on the
    whole window. Right-edge estimates average the density over the last
    ``edge_fraction`` of the window; left-edge estimates take the largest density
    in the first twentieth.

    Raises NotSpreadOut when the kernel is not spread out.
    """
    lat = stats.lattice
    if lat is None and K is not None:
        lat = lattice_type(K, pd)
    if lat is not None and not lat.spread_out:
        raise NotSpreadOut(f"kernel is {lat}; no Stone density")
    a, b = V.window
    ka, kb = _window_cells(V.window, V.step)
    t = np.arange(ka, kb) * V.step
    m = V.m
    dens = [[None] * m for _ in range(m)]
    right = np.zeros((m, m))
    left = np.zeros((m, m))
    n_edge = max(1, int(edge_fraction * (kb - ka)))
    n_left = max(1, (kb - ka) // 20)
    for i in range(m):
        for j in range(m):
            e = V[i, j]
            arr = np.zeros(kb - ka)
            lo, hi = max(e.k0, ka), min(e.k0 + e.cells.size, kb)
            if hi > lo:
                arr[lo - ka: hi - ka] = e.cells[lo - e.k0: hi - e.k0]
            arr = np.maximum(arr, 0.0) / V.step
            dens[i][j] = arr
            right[i, j] = arr[-n_edge:].mean()
            left[i, j] = arr[:n_left].max()
    limit = np.outer(pd.v, pd.u) / stats.mu
    return StoneDiagnostics(t, dens, right, left, limit)
