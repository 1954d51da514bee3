"""Monte Carlo for Markov random walks: paths, regeneration cycles, empirical renewal
measures, ladder epochs and exponential tilting.

Random streams come from ``numpy.random.SeedSequence``: replicate ``r`` of master
seed ``s`` uses ``SeedSequence(s, spawn_key=(r,))``, so replicates are independent
and each one is reproducible on its own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientVisits, ValidationError
from .kernel import Dist, Measure, SemiMarkovKernel, mgf_matrix
from .perron import PerronData, perron_pair
from .renewal import GridMeasure, _window_cells


def replicate_rng(seed: int, r: int = 0) -> np.random.Generator:
    """Independent generator for replicate ``r`` of master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(r),)))


def _check_stochastic(K: SemiMarkovKernel, tol: float = 1e-9) -> None:
    dev = np.abs(K.weights.sum(axis=1) - 1.0).max()
    if dev > tol:
        raise ValidationError(f"simulation needs stochastic weights (row-sum defect {dev:.3e}); "
                              "use the harmonic transform first")


@dataclass
class PathRecord:
    """One path of ``(M_n, S_n)``: ``states[n] = M_n``, ``increments[n-1] = X_n``."""

    seed: int
    states: np.ndarray
    increments: np.ndarray
    partial_sums: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.increments)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("n,M_n,X_n,S_n\n")
            fh.write(f"0,{self.states[0] + 1},,0\n")
            for n in range(1, len(self.states)):
                fh.write(f"{n},{self.states[n] + 1},{self.increments[n - 1]:.12g},"
                         f"{self.partial_sums[n]:.12g}\n")


@dataclass
class PathBatch:
    """Many paths of equal length, one per row."""

    states: np.ndarray
    increments: np.ndarray

    @property
    def partial_sums(self) -> np.ndarray:
        S = np.zeros((self.states.shape[0], self.states.shape[1]))
        np.cumsum(self.increments, axis=1, out=S[:, 1:])
        return S

    def path(self, r: int, seed: int = -1) -> PathRecord:
        S = self.partial_sums[r]
        return PathRecord(seed, self.states[r], self.increments[r], S)


def sample_paths(K: SemiMarkovKernel, i0, n_steps: int, n_paths: int,
                 rng: np.random.Generator) -> PathBatch:
    """Vectorized simulation of ``n_paths`` paths with stochastic weights ``K.weights``.

    ``i0`` is a start state or an array of start states (one per path).
    """
    _check_stochastic(K)
    m = K.m
    cum = np.cumsum(K.weights, axis=1)
    cum[:, -1] = 1.0
    states = np.empty((n_paths, n_steps + 1), dtype=np.int64)
    states[:, 0] = i0
    for n in range(n_steps):
        u = rng.random(n_paths)
        row = cum[states[:, n]]
        states[:, n + 1] = (u[:, None] >= row).sum(axis=1)
    X = np.empty((n_paths, n_steps))
    src, dst = states[:, :-1], states[:, 1:]
    code = src * m + dst
    for i, j in K.edges():
        sel = code == i * m + j
        cnt = int(sel.sum())
        if cnt:
            X[sel] = K.dists[i][j].sample(rng, cnt)
    return PathBatch(states, X)


def sample_path(K: SemiMarkovKernel, i0: int, n_steps: int, seed: int) -> PathRecord:
    """One path of length ``n_steps`` from state ``i0``; deterministic given ``seed``."""
    batch = sample_paths(K, i0, n_steps, 1, replicate_rng(seed, 0))
    rec = batch.path(0, seed)
    rec.partial_sums[0] = 0.0
    return rec


# --- regeneration cycles ---------------------------------------------------------


def return_cycles(path: PathRecord, i: int, min_returns: int = 2):
    """Successive return times ``sigma_n(i)`` and ``S`` at those times.

    Raises InsufficientVisits if the path does not start in ``i`` or returns fewer
    than ``min_returns`` times.
    """
    if path.states[0] != i:
        raise InsufficientVisits(f"path starts in state {path.states[0] + 1}, not {i + 1}")
    sigma = np.flatnonzero(path.states[1:] == i) + 1
    if sigma.size < min_returns:
        raise InsufficientVisits(f"only {sigma.size} returns to state {i + 1} (need {min_returns})")
    return sigma, path.partial_sums[sigma]


@dataclass
class Estimate:
    value: float
    se: float
    n: int

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.value - target) <= k * self.se + 1e-12


def _estimate(samples: np.ndarray) -> Estimate:
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    return Estimate(float(samples.mean()), se, n)


@dataclass
class CycleEstimates:
    drift: Estimate
    occupation: list[Estimate]
    functional: Estimate | None
    n_cycles: int


def _cycle_sums(path: PathRecord, i: int, values: np.ndarray) -> np.ndarray:
    """Per-cycle sums of ``values[n-1]`` over ``n = sigma_{k-1}+1 .. sigma_k``."""
    sigma, _ = return_cycles(path, i)
    c = np.concatenate([[0.0], np.cumsum(values)])
    bounds = np.concatenate([[0], sigma])
    return c[bounds[1:]] - c[bounds[:-1]]


def cycle_estimators(paths, i: int, g=None) -> CycleEstimates:
    """Regeneration-cycle estimates from paths started in ``i``.

    Returns the mean cycle increment ``E_i S_sigma(i)``, expected visits to each state
    per cycle (``n = 1..sigma(i)``, so state ``i`` counts once) and, when ``g`` is
    given, the mean cycle sum of ``g(M_n, X_n)``. Standard errors are computed
    across cycles.
    """
    if isinstance(paths, PathRecord):
        paths = [paths]
    drift, func = [], []
    m = max(int(p.states.max()) for p in paths) + 1
    occ = [[] for _ in range(m)]
    for p in paths:
        drift.append(_cycle_sums(p, i, p.increments))
        for j in range(m):
            occ[j].append(_cycle_sums(p, i, (p.states[1:] == j).astype(float)))
        if g is not None:
            func.append(_cycle_sums(p, i, np.asarray(g(p.states[1:], p.increments), dtype=float)))
    d = np.concatenate(drift)
    return CycleEstimates(
        _estimate(d),
        [_estimate(np.concatenate(o)) for o in occ],
        _estimate(np.concatenate(func)) if g is not None else None,
        d.size,
    )


def stationary_expectation(K: SemiMarkovKernel, pi: np.ndarray, g, i: int | None = None) -> float:
    """``E_pi g(M_1, X_1)`` for stochastic ``K``; with ``i`` given, ``pi`` is rescaled so ``pi_i = 1``.

    ``g(j, x)`` must accept a state index and an array of increments.
    """
    pi = np.asarray(pi, dtype=float)
    if i is not None:
        pi = pi / pi[i]
    total = 0.0
    for a, b in K.edges():
        fam = K.dists[a][b].family
        if fam is not None:
            e = fam.expect(lambda x, b=b: g(b, x))
        else:
            d = K.dists[a][b]
            e = float((g(b, d.atoms_x) * d.atoms_w).sum())
            if d.cells.size:
                e += float((g(b, d.cell_left + 0.5 * d.step) * d.cells).sum())
        total += pi[a] * K.weights[a, b] * e
    return total


# --- empirical renewal measure ------------------------------------------------------


@dataclass
class EmpiricalRenewal:
    measure: GridMeasure
    se: list[list[np.ndarray]]
    n_paths: int


def empirical_renewal(paths: PathBatch, i: int, window, step: float,
                      atomic: bool = False) -> EmpiricalRenewal:
    """Average visit counts of ``(M_n, S_n)`` per cell of the window (row ``i`` of ``U``).

    With ``atomic=True`` visits are tallied at their exact locations (rounded to
    ``1e-9``) and reported as atoms. Standard errors are across paths.
    """
    ka, kb = _window_cells(window, step)
    S = paths.partial_sums
    M = paths.states
    n_paths = S.shape[0]
    m = int(M.max()) + 1
    rows = [[Measure(step) for _ in range(m)] for _ in range(m)]
    se = [[np.zeros(0) for _ in range(m)] for _ in range(m)]
    a, b = window
    for j in range(m):
        inside = (M == j) & (S >= a) & (S <= b)
        r_idx, c_idx = np.nonzero(inside)
        vals = S[r_idx, c_idx]
        if atomic:
            keys = np.round(vals, 9)
            locs, inv = np.unique(keys, return_inverse=True)
            counts = np.zeros((n_paths, locs.size))
            np.add.at(counts, (r_idx, inv), 1.0)
            rows[i][j] = Measure(step, locs, counts.mean(axis=0))
        else:
            k = np.floor(vals / step + 1e-9).astype(np.int64) - ka
            ok = (k >= 0) & (k < kb - ka)
            counts = np.zeros((n_paths, kb - ka))
            np.add.at(counts, (r_idx[ok], k[ok]), 1.0)
            mean = counts.mean(axis=0)
            rows[i][j] = Measure(step, k0=ka, cells=mean)
            # keep the SE array aligned with the (possibly trimmed) cell array
            full_se = counts.std(axis=0, ddof=1) / math.sqrt(n_paths)
            off = rows[i][j].k0 - ka
            se[i][j] = full_se[off: off + rows[i][j].cells.size]
            continue
        se[i][j] = counts.std(axis=0, ddof=1) / math.sqrt(n_paths)
    return EmpiricalRenewal(GridMeasure(window, step, rows, None, "U-empirical"), se, n_paths)


def slab_estimate(paths: PathBatch, i: int, j: int, t: float, h: float) -> Estimate:
    """Visits of ``(M_n, S_n)`` to ``{j} x (t, t+h]`` per path, with SE."""
    S, M = paths.partial_sums, paths.states
    hits = ((M == j) & (S > t) & (S <= t + h)).sum(axis=1)
    return _estimate(hits)


# --- ladder epochs ---------------------------------------------------------------


@dataclass
class Ladder:
    epochs: np.ndarray
    heights: np.ndarray
    states: np.ndarray


def ladder_epochs(path: PathRecord) -> Ladder:
    """Strictly ascending ladder epochs: each new strict maximum of ``S_n`` above ``S_0 = 0``."""
    S = path.partial_sums
    prev = np.maximum.accumulate(np.concatenate([[0.0], S[1:]]))[:-1]
    prev = np.maximum(prev, 0.0)
    idx = np.flatnonzero(S[1:] > prev) + 1
    return Ladder(idx, S[idx], path.states[idx])


# --- exponential tilting -----------------------------------------------------------


@dataclass
class TiltedKernel:
    """``Q_lam = (p_ij phi_ij(lam))`` with its Perron data and the tilted sampler.

    ``sampler`` has weights ``q_ij v_j / (rho v_i)`` and laws
    ``e^{lam x} G_ij(dx) / phi_ij(lam)``.
    """

    lam: float
    Q: np.ndarray
    pd: PerronData
    sampler: SemiMarkovKernel


def tilted_kernel(K: SemiMarkovKernel, lam: float, pd: PerronData | None = None) -> TiltedKernel:
    """Exponentially tilt a stochastic kernel ``P (x) G`` by ``lam``.

    Raises DivergentMoment if some ``phi_ij(lam)`` is infinite.
    """
    _check_stochastic(K)
    Q = K.weights * mgf_matrix(K, lam)
    Q[K.weights == 0] = 0.0
    if pd is None:
        pd = perron_pair(Q)
    P = Q * pd.v[None, :] / (pd.rho * pd.v[:, None])
    P = P / P.sum(axis=1, keepdims=True)
    m = K.m
    dists = [[None] * m for _ in range(m)]
    for i, j in K.edges():
        dists[i][j] = K.dists[i][j] if lam == 0 else K.dists[i][j].tilted(lam)
    return TiltedKernel(lam, Q, pd, SemiMarkovKernel(P, dists, K.step))


def first_return_sums(K: SemiMarkovKernel, i: int, n: int, rng: np.random.Generator,
                      max_steps: int = 100_000) -> tuple[np.ndarray, np.ndarray]:
    """``(S_sigma(i), returned)`` for ``n`` independent cycles started in ``i``."""
    _check_stochastic(K)
    m = K.m
    cum = np.cumsum(K.weights, axis=1)
    cum[:, -1] = 1.0
    state = np.full(n, i, dtype=np.int64)
    S = np.zeros(n)
    active = np.ones(n, dtype=bool)
    for _ in range(max_steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        src = state[idx]
        dst = (rng.random(idx.size)[:, None] >= cum[src]).sum(axis=1)
        X = np.empty(idx.size)
        code = src * m + dst
        for a, b in K.edges():
            sel = code == a * m + b
            cnt = int(sel.sum())
            if cnt:
                X[sel] = K.dists[a][b].sample(rng, cnt)
        S[idx] += X
        state[idx] = dst
        active[idx[dst == i]] = False
    return S, ~active


def tilt_identity(K: SemiMarkovKernel, lam: float, i: int, n_cycles: int, seed: int,
                  max_steps: int = 100_000) -> Estimate:
    """MC estimate of ``E_i e^{lam S_sigma(i)}`` (equal to 1 when ``rho(Q_lam) = 1``)."""
    S, done = first_return_sums(K, i, n_cycles, replicate_rng(seed, 0), max_steps)
    return _estimate(np.where(done, np.exp(lam * S), 0.0))


def steps_to_clear(mu_prob: float, right: float, margin: float = 10.0) -> int:
    """Rough number of steps for paths with drift ``mu_prob`` to pass ``right + margin``."""
    if not mu_prob > 0:
        raise ValidationError("drift must be positive")
    return int(math.ceil(2.0 * (right + margin) / mu_prob)) + 50

