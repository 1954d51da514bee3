"""Measures on a lattice grid and the semi-Markov kernel ``Q (x) F``."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _grid
from .errors import DivergentMoment, GridMismatch, NonPositiveDrift, ValidationError
from .families import Family, parse_family
from .perron import PerronData, as_qs_matrix, strongly_connected

DEFAULT_STEP = 1e-2
TAIL_EPS = 1e-15


class Measure:
    """Finite measure on the real line: atoms plus cell masses on ``k * step``.

    Cell ``k`` of ``cells`` covers ``[(k0 + k) * step, (k0 + k + 1) * step)`` and its
    mass is spread uniformly over the cell. ``under`` / ``over`` hold mass that
    left the represented support to the left / right.
    """

    def __init__(self, step, atoms_x=(), atoms_w=(), k0=0, cells=(), under=0.0, over=0.0):
        if not step > 0:
            raise ValidationError(f"grid step must be positive, got {step}")
        self.step = float(step)
        self.atoms_x, self.atoms_w = _grid.merge_atoms(atoms_x, atoms_w)
        self.k0, self.cells = _grid.trim(int(k0), np.asarray(cells, dtype=float))
        self.under = float(under)
        self.over = float(over)

    # -- basic properties --------------------------------------------------

    @property
    def has_density(self) -> bool:
        return bool(self.cells.size) and bool(np.any(self.cells > 0))

    @property
    def core_total(self) -> float:
        return float(self.atoms_w.sum() + self.cells.sum())

    @property
    def total(self) -> float:
        return self.core_total + self.under + self.over

    @property
    def cell_left(self) -> np.ndarray:
        return (self.k0 + np.arange(self.cells.size)) * self.step

    def support(self) -> tuple[float, float]:
        lo, hi = [], []
        if self.atoms_x.size:
            lo.append(self.atoms_x[0])
            hi.append(self.atoms_x[-1])
        if self.cells.size:
            lo.append(self.k0 * self.step)
            hi.append((self.k0 + self.cells.size) * self.step)
        if not lo:
            return (0.0, 0.0)
        return (min(lo), max(hi))

    def mass_between(self, lo: float, hi: float, closed: str = "right") -> float:
        """Mass of the interval from ``lo`` to ``hi``.

        ``closed`` is one of ``"right"`` for ``(lo, hi]``, ``"left"``, ``"both"``,
        ``"neither"``. Cells count in proportion to their overlap.
        """
        x, w = self.atoms_x, self.atoms_w
        tol = _grid.SNAP * max(1.0, abs(lo), abs(hi))
        left_ok = x >= lo - tol if closed in ("left", "both") else x > lo + tol
        right_ok = x <= hi + tol if closed in ("right", "both") else x < hi - tol
        total = float(w[left_ok & right_ok].sum())
        if self.cells.size and hi > lo:
            a = self.cell_left
            overlap = np.clip(np.minimum(a + self.step, hi) - np.maximum(a, lo), 0.0, self.step)
            total += float((self.cells * overlap / self.step).sum())
        return total

    def mean(self) -> float:
        """First moment of the core part; cells count at their midpoints."""
        m = float((self.atoms_x * self.atoms_w).sum())
        if self.cells.size:
            m += float(((self.cell_left + 0.5 * self.step) * self.cells).sum())
        if self.under or self.over:
            warnings.warn("mean ignores mass outside the represented support", stacklevel=2)
        return m

    def mgf(self, lam: float) -> float:
        """``integral e^{lam x}`` over the core part, exact for cell-uniform mass."""
        val = float((np.exp(lam * self.atoms_x) * self.atoms_w).sum())
        if self.cells.size:
            a = self.cell_left
            h = lam * self.step
            factor = math.expm1(h) / h if h != 0 else 1.0
            val += float((self.cells * np.exp(lam * a) * factor).sum())
        return val

    # -- transformations ---------------------------------------------------

    def _like(self, **kw) -> "Measure":
        args = dict(step=self.step, atoms_x=self.atoms_x, atoms_w=self.atoms_w,
                    k0=self.k0, cells=self.cells, under=self.under, over=self.over)
        args.update(kw)
        return Measure(**args)

    def scaled(self, c: float) -> "Measure":
        return self._like(atoms_w=self.atoms_w * c, cells=self.cells * c,
                          under=self.under * c, over=self.over * c)

    def plus(self, other: "Measure") -> "Measure":
        _check_step(self, other)
        k0, cells = _grid.accumulate([(self.k0, self.cells), (other.k0, other.cells)])
        return Measure(self.step, np.concatenate([self.atoms_x, other.atoms_x]),
                       np.concatenate([self.atoms_w, other.atoms_w]), k0, cells,
                       self.under + other.under, self.over + other.over)

    def restrict(self, k_lo: int, k_hi: int) -> "Measure":
        """Keep cells ``[k_lo, k_hi)``; everything else goes to the overflow buckets."""
        lo_x, hi_x = k_lo * self.step, k_hi * self.step
        tol = _grid.SNAP * max(1.0, abs(lo_x), abs(hi_x))
        x, w = self.atoms_x, self.atoms_w
        below = x < lo_x - tol
        above = x >= hi_x - tol
        idx = self.k0 + np.arange(self.cells.size)
        cb, ca = idx < k_lo, idx >= k_hi
        inside = ~(cb | ca)
        return Measure(
            self.step, x[~(below | above)], w[~(below | above)],
            self.k0 + (int(np.argmax(inside)) if inside.any() else 0),
            self.cells[inside],
            self.under + w[below].sum() + self.cells[cb].sum(),
            self.over + w[above].sum() + self.cells[ca].sum(),
        )

    def convolve(self, other: "Measure") -> "Measure":
        return convolve(self, other)

    def __repr__(self):
        return (f"{type(self).__name__}(step={self.step:g}, atoms={self.atoms_x.size}, "
                f"cells={self.cells.size}, total={self.total:.6g})")


class Dist(Measure):
    """Sub-probability law on the grid, optionally tagged with its analytic family."""

    def __init__(self, step, atoms_x=(), atoms_w=(), k0=0, cells=(), under=0.0, over=0.0,
                 family: Family | None = None):
        super().__init__(step, atoms_x, atoms_w, k0, cells, under, over)
        if np.any(self.atoms_w < 0) or np.any(self.cells < 0):
            raise ValidationError("distribution has negative mass")
        if self.total > 1 + 1e-12:
            raise ValidationError(f"distribution mass {self.total!r} exceeds 1")
        self.family = family

    @classmethod
    def from_family(cls, fam: Family | str, step: float = DEFAULT_STEP,
                    tail_eps: float = TAIL_EPS) -> "Dist":
        """Discretize ``fam``: atoms exact, continuous part by CDF differences per cell."""
        if isinstance(fam, str):
            fam = parse_family(fam)
        atoms = fam.atoms()
        xs = [a for a, _ in atoms]
        ws = [w for _, w in atoms]
        k0, cells, under, over = 0, np.zeros(0), 0.0, 0.0
        if fam.cont_mass > 1e-15:
            lo, hi = fam.cont_support(tail_eps)
            k_lo = math.floor(lo / step + _grid.SNAP)
            k_hi = max(math.ceil(hi / step - _grid.SNAP), k_lo + 1)
            edges = np.arange(k_lo, k_hi + 1) * step
            cdf = np.asarray(fam.cont_cdf(edges), dtype=float)
            sf = np.asarray(fam.cont_sf(edges), dtype=float)
            # cdf differences lose precision in the right tail; use sf there
            use_sf = cdf > 0.5 * fam.cont_mass
            d_cdf = np.diff(cdf)
            d_sf = -np.diff(sf)
            cells = np.where(use_sf[:-1], d_sf, d_cdf).clip(min=0.0)
            k0 = k_lo
            under = float(cdf[0])
            over = float(sf[-1])
        return cls(step, xs, ws, k0, cells, under, over, family=fam)

    @classmethod
    def point(cls, x: float = 0.0, step: float = DEFAULT_STEP) -> "Dist":
        from .families import Point

        return cls(step, [x], [1.0], family=Point(float(x)))

    @classmethod
    def from_measure(cls, mu: Measure, family: Family | None = None) -> "Dist":
        return cls(mu.step, mu.atoms_x, mu.atoms_w, mu.k0, mu.cells, mu.under, mu.over,
                   family=family)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Analytic sampler when the family is known, inverse CDF on the grid otherwise."""
        if self.family is not None:
            return self.family.sample(rng, size)
        probs = np.concatenate([self.atoms_w, self.cells])
        probs = probs / probs.sum()
        idx = rng.choice(probs.size, size=size, p=probs)
        na = self.atoms_x.size
        out = np.empty(size)
        is_atom = idx < na
        out[is_atom] = self.atoms_x[idx[is_atom]]
        cell = idx[~is_atom] - na
        out[~is_atom] = (self.k0 + cell + rng.random(cell.size)) * self.step
        return out

    def tilted(self, lam: float) -> "Dist":
        """Exponentially tilted law ``e^{lam x} F(dx) / phi(lam)``."""
        phi = dist_stats(self, lam)[1]
        fam = self.family.tilt(lam) if self.family is not None else None
        if fam is not None:
            return Dist.from_family(fam, self.step)
        h = lam * self.step
        factor = math.expm1(h) / h if h != 0 else 1.0
        cells = self.cells * np.exp(lam * self.cell_left) * factor / phi
        atoms_w = self.atoms_w * np.exp(lam * self.atoms_x) / phi
        return Dist(self.step, self.atoms_x, atoms_w, self.k0, cells)


def _check_step(a: Measure, b: Measure) -> None:
    if abs(a.step - b.step) > 1e-12 * max(a.step, b.step):
        raise GridMismatch(f"grid steps differ: {a.step!r} vs {b.step!r}")


def convolve(F: Measure, G: Measure) -> Measure:
    """Convolution ``F * G`` in the cell-uniform lattice algebra; total mass multiplies."""
    _check_step(F, G)
    step = F.step
    ax = (F.atoms_x[:, None] + G.atoms_x[None, :]).ravel()
    aw = (F.atoms_w[:, None] * G.atoms_w[None, :]).ravel()
    parts = []
    if F.cells.size and G.cells.size:
        parts.append((F.k0 + G.k0, _grid.halfsplit(_grid.conv(F.cells, G.cells))))
    if F.atoms_x.size and G.cells.size:
        s0, sp = _grid.spike(F.atoms_x, F.atoms_w, step)
        parts.append((s0 + G.k0, _grid.conv(sp, G.cells)))
    if G.atoms_x.size and F.cells.size:
        s0, sp = _grid.spike(G.atoms_x, G.atoms_w, step)
        parts.append((s0 + F.k0, _grid.conv(sp, F.cells)))
    k0, cells = _grid.accumulate(parts)
    cells = np.maximum(cells, 0.0) if (F.cells.min(initial=0) >= 0 and G.cells.min(initial=0) >= 0) else cells
    fc, gc = F.core_total, G.core_total
    # left/right overflow pairs have unknown location; count them as left (conservative
    # for the series truncation test, which bounds mass left of the window end)
    under = F.under * (gc + G.under + G.over) + (fc + F.over) * G.under
    over = F.over * (gc + G.over) + fc * G.over
    out = Measure(step, ax, aw, k0, cells, under, over)
    if isinstance(F, Dist) and isinstance(G, Dist):
        return Dist.from_measure(out)
    return out


def dist_convolve(F: Dist, G: Dist) -> Dist:
    """Convolution of two laws on the same grid."""
    return convolve(F, G)


def dist_stats(F: Measure, lam: float | None = None) -> tuple[float, float | None]:
    """``(mean, phi(lam))``; analytic when ``F`` carries a family tag.

    Raises DivergentMoment outside the convergence region of an analytic family.
    Grid sums are used otherwise, with a warning when the tail mass is nonzero.
    """
    fam = getattr(F, "family", None)
    if fam is not None:
        mean = fam.mean()
        phi = fam.mgf(lam) if lam is not None else None
        return mean, phi
    mean = F.mean()
    phi = None
    if lam is not None:
        if F.under > 0 or F.over > 0:
            warnings.warn("exponential moment from the grid ignores tail mass", stacklevel=2)
        phi = F.mgf(lam)
    return mean, phi


# --- the kernel --------------------------------------------------------------


@dataclass
class LatticeType:
    """Lattice classification: ``arithmetic`` with span ``d`` and shifts ``gamma``."""

    arithmetic: bool
    d: float | None = None
    gamma: np.ndarray | None = None
    spread_out: bool = False

    def __str__(self):
        if self.arithmetic:
            return f"Arithmetic(d={self.d:g}, gamma={np.round(self.gamma, 12).tolist()})"
        return f"NonArithmetic(spread_out={self.spread_out})"


@dataclass
class KernelStats:
    mu: float
    mean_matrix: np.ndarray
    lattice: LatticeType | None = None


@dataclass
class SemiMarkovKernel:
    """The matrix ``Q (x) F = (q_ij F_ij)`` with all laws on one grid."""

    weights: np.ndarray
    dists: list[list[Dist | None]]
    step: float = field(default=DEFAULT_STEP)

    def __post_init__(self):
        self.weights = as_qs_matrix(self.weights)
        m = self.m
        if len(self.dists) != m or any(len(row) != m for row in self.dists):
            raise ValidationError(f"distribution matrix must be {m}x{m}")
        for i in range(m):
            for j in range(m):
                d = self.dists[i][j]
                if self.weights[i, j] > 0:
                    if d is None:
                        raise ValidationError(f"missing distribution for cell ({i + 1},{j + 1})")
                    if abs(d.total - 1.0) > 1e-9:
                        raise ValidationError(
                            f"distribution for cell ({i + 1},{j + 1}) has mass {d.total:.12g}, not 1")
                    if abs(d.step - self.step) > 1e-12 * self.step:
                        raise GridMismatch(f"cell ({i + 1},{j + 1}) uses step {d.step} != {self.step}")
        if not strongly_connected(self.weights):
            raise ValidationError("weight matrix is not irreducible")

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def from_specs(cls, weights, specs, step: float = DEFAULT_STEP) -> "SemiMarkovKernel":
        """Build from distribution spec strings; a single string applies to every cell."""
        W = as_qs_matrix(weights)
        m = W.shape[0]
        if isinstance(specs, (str, Family)):
            specs = [[specs] * m for _ in range(m)]
        dists = [[None] * m for _ in range(m)]
        for i in range(m):
            for j in range(m):
                s = specs[i][j]
                if W[i, j] > 0 and s is not None:
                    dists[i][j] = s if isinstance(s, Dist) else Dist.from_family(s, step)
        return cls(W, dists, step)

    def with_weights(self, weights) -> "SemiMarkovKernel":
        return SemiMarkovKernel(weights, self.dists, self.step)

    def harmonic(self, pd: PerronData) -> "SemiMarkovKernel":
        """The stochastic kernel ``P (x) F`` with ``P = D^-1 Q D``."""
        from .perron import harmonic_transform

        P, _ = harmonic_transform(self.weights, pd, tol=max(pd.tol_used, 1e-10))
        return self.with_weights(P)

    def entry(self, i: int, j: int) -> Measure:
        """``q_ij F_ij`` as a measure (zero measure when ``q_ij = 0``)."""
        d = self.dists[i][j]
        if self.weights[i, j] == 0 or d is None:
            return Measure(self.step)
        return d.scaled(self.weights[i, j])

    def edges(self):
        m = self.m
        return [(i, j) for i in range(m) for j in range(m) if self.weights[i, j] > 0]


def identity(m: int, step: float) -> list[list[Measure]]:
    """``A^{*0}``: ``delta_0`` on the diagonal, zero elsewhere."""
    return [[Measure(step, [0.0], [1.0]) if i == j else Measure(step) for j in range(m)]
            for i in range(m)]


def kernel_convolve(K: SemiMarkovKernel, B):
    """``((Q (x) F) * B)_ij = sum_k q_ik F_ik * B_kj``.

    ``B`` is an ``m x m`` nested list of measures, or a GridFunction (vector case).
    """
    if hasattr(B, "cell_values"):
        from .mre import apply_kernel

        return apply_kernel(K, B)
    m = K.m
    out = []
    for i in range(m):
        row = []
        for j in range(m):
            acc = Measure(K.step)
            for k in range(m):
                if K.weights[i, k] > 0:
                    _check_step(K.dists[i][k], B[k][j])
                    acc = acc.plus(convolve(K.entry(i, k), B[k][j]))
            row.append(acc)
        out.append(row)
    return out


def kernel_power(K: SemiMarkovKernel, n: int):
    """``(Q (x) F)^{*n}`` returned as ``(Q^n, laws)`` with ``laws[i][j] = F_ij^{*n}``.

    The entry measure is ``(Q^n)_ij * laws[i][j]``; laws are None where the weight is 0.
    """
    if n < 0:
        raise ValidationError("power must be nonnegative")
    A = identity(K.m, K.step)
    for _ in range(n):
        A = kernel_convolve(K, A)
    Qn = np.linalg.matrix_power(K.weights, n)
    laws = [[None] * K.m for _ in range(K.m)]
    for i in range(K.m):
        for j in range(K.m):
            tot = A[i][j].total
            if tot > 0:
                laws[i][j] = A[i][j].scaled(1.0 / tot)
    return Qn, laws


def kernel_power_measures(K: SemiMarkovKernel, n: int) -> list[list[Measure]]:
    """Entry measures of ``(Q (x) F)^{*n}`` (unnormalized)."""
    A = identity(K.m, K.step)
    for _ in range(n):
        A = kernel_convolve(K, A)
    return A


# --- lattice classification ---------------------------------------------------


def _real_gcd(values: Sequence[float], tol: float) -> float:
    g = 0.0
    for x in values:
        a, b = abs(float(x)), g
        if a <= tol:
            continue
        if b <= tol:
            g = a
            continue
        a, b = max(a, b), min(a, b)
        while b > tol:
            r = math.fmod(a, b)
            if r <= tol or b - r <= tol:
                r = 0.0
            a, b = b, r
        g = a
    return g


def lattice_type(K: SemiMarkovKernel, pd: PerronData | None = None,
                 snap_tol: float | None = None) -> LatticeType:
    """Classify ``Q (x) F`` as d-arithmetic (span and shift function) or nonarithmetic.

    Any edge law with a density part makes the kernel spread out. For purely atomic
    kernels, ``d`` is the real gcd of the residuals of all support points against
    shifts propagated along a BFS spanning tree; this generates the same group as the
    cycle sums.
    """
    edges = K.edges()
    if pd is not None:
        edges = [(i, j) for i, j in edges if pd.u[i] * K.weights[i, j] * pd.v[j] > 0]
    for i, j in edges:
        if K.dists[i][j].has_density:
            return LatticeType(False, spread_out=True)
    support = {e: K.dists[e[0]][e[1]].atoms_x for e in edges}
    scale = max([1.0] + [float(np.abs(s).max()) for s in support.values() if s.size])
    if snap_tol is None:
        snap_tol = 1e-9 * scale
    m = K.m
    shift = np.full(m, np.nan)
    shift[0] = 0.0
    queue = [0]
    adj = {}
    for i, j in edges:
        adj.setdefault(i, []).append(j)
    while queue:
        i = queue.pop(0)
        for j in adj.get(i, []):
            if np.isnan(shift[j]):
                shift[j] = shift[i] + support[(i, j)][0]
                queue.append(j)
    residuals = []
    for (i, j), xs in support.items():
        residuals.extend(xs - (shift[j] - shift[i]))
    d = _real_gcd(residuals, snap_tol)
    # a span this small is floating-point noise from incommensurable supports
    if d <= max(1e3 * snap_tol, 1e-6 * scale):
        return LatticeType(False, spread_out=False)
    r = np.asarray(residuals) / d
    if np.abs(r - np.round(r)).max() * d > 1e3 * snap_tol:
        return LatticeType(False, spread_out=False)
    gamma = np.mod(shift, d)
    gamma[np.abs(gamma - d) <= 1e3 * snap_tol] = 0.0
    return LatticeType(True, d=d, gamma=gamma)


def stationary_drift(K: SemiMarkovKernel, pd: PerronData, check: bool = True) -> KernelStats:
    """``mu = sum_ij u_i q_ij v_j mu_ij``; NonPositiveDrift when ``check`` and ``mu <= 0``."""
    m = K.m
    means = np.zeros((m, m))
    for i, j in K.edges():
        means[i, j] = dist_stats(K.dists[i][j])[0]
    mu = float(np.sum(pd.u[:, None] * K.weights * pd.v[None, :] * means))
    if check and not mu > 0:
        raise NonPositiveDrift(f"stationary drift mu={mu:.6g} is not positive")
    return KernelStats(mu, means, None)


def kernel_stats(K: SemiMarkovKernel, pd: PerronData, check: bool = True) -> KernelStats:
    """Drift plus lattice classification."""
    st = stationary_drift(K, pd, check)
    st.lattice = lattice_type(K, pd)
    return st


def mgf_matrix(K: SemiMarkovKernel, lam: float) -> np.ndarray:
    """``(phi_ij(lam))`` over the edges of ``K`` (1 elsewhere)."""
    m = K.m
    out = np.ones((m, m))
    for i, j in K.edges():
        phi = dist_stats(K.dists[i][j], lam)[1]
        if not np.isfinite(phi):
            raise DivergentMoment(f"mgf of cell ({i + 1},{j + 1}) diverges at {lam:g}")
        out[i, j] = phi
    return out
