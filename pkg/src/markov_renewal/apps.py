"""End-to-end drivers: supremum tails of a Markov random walk with negative drift,
Malthusian parameters of multitype branching populations, and tail exponents of
perpetuities in a Markovian environment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats
from scipy.sparse.csgraph import connected_components

from .errors import DivergentMoment, NoRoot, NonConvergence, NotIrreducible, NotPrimitive, ValidationError
from .families import Family, Point, parse_family
from .kernel import Dist, KernelStats, SemiMarkovKernel, dist_stats, mgf_matrix, stationary_drift
from .mre import GridFunction, asymptotic_limit, residual, right_edge_value, solve_mre
from .perron import PerronData, is_primitive, perron_pair, stationary_measure
from .renewal import renewal_measure
from .simulate import Estimate, _estimate, replicate_rng, tilted_kernel

ROOT_TOL = 1e-10


# --- tilting root ---------------------------------------------------------------


@dataclass
class TiltRoot:
    lam: float
    rho: float
    Q: np.ndarray
    pd: PerronData


def _rho(K: SemiMarkovKernel, lam: float) -> float:
    Q = K.weights * mgf_matrix(K, lam)
    Q[K.weights == 0] = 0.0
    if not np.all(np.isfinite(Q)):
        raise DivergentMoment(f"moment generating function diverges at {lam:g}")
    if Q.max() == 0 or not np.isfinite(Q.max()):
        return 0.0
    try:
        return perron_pair(Q, tol=1e-12 * max(1.0, Q.max())).rho
    except (NotIrreducible, NonConvergence):
        return float(np.abs(np.linalg.eigvals(Q)).max())


def prob_drift(K: SemiMarkovKernel) -> float:
    """Stationary drift ``E_pi X_1`` of a stochastic kernel."""
    pd = perron_pair(K.weights)
    means = np.zeros_like(K.weights)
    for i, j in K.edges():
        means[i, j] = dist_stats(K.dists[i][j])[0]
    pi = stationary_measure(pd)
    return float(np.sum(pi[:, None] * K.weights * means))


def find_tilt_root(K: SemiMarkovKernel, bracket=None, tol: float = ROOT_TOL,
                   max_hi: float = 1024.0) -> TiltRoot:
    """Positive ``lam`` with ``rho(P_lam) = 1`` for a stochastic kernel ``P (x) G``.

    ``lam -> log rho(P_lam)`` is convex and vanishes at 0, so with negative drift there
    is at most one positive root. The minimum on ``(0, hi)`` is located first, then
    ``brentq`` runs on ``[argmin, hi]``; ``hi`` is doubled (default search) until
    ``rho(P_hi) > 1``.

    Raises
    ------
    NoRoot
        Nonnegative drift, or ``rho(P_lam) < 1`` on the whole bracket.
    DivergentMoment
        If a user-supplied bracket edge lies outside the moment region.
    """
    if abs(K.weights.sum(axis=1) - 1).max() > 1e-9:
        raise ValidationError("find_tilt_root expects a stochastic kernel P (x) G")
    mu = prob_drift(K)
    if not mu < 0:
        raise NoRoot(f"stationary drift {mu:.6g} is not negative; no positive tilting root")
    f = lambda lam: _rho(K, lam) - 1.0  # noqa: E731
    if bracket is not None:
        lo, hi = float(bracket[0]), float(bracket[1])
        f(hi)
    else:
        lo, hi = 0.0, 1.0
        last_ok = 0.0
        while True:
            try:
                val = f(hi)
            except DivergentMoment:
                # step back towards the last finite point
                if hi - last_ok < 1e-12:
                    raise NoRoot("rho(P_lam) < 1 up to the edge of the moment region")
                hi = 0.5 * (last_ok + hi)
                continue
            if val > 0:
                break
            last_ok = hi
            if hi >= max_hi:
                raise NoRoot(f"rho(P_lam) < 1 on (0, {max_hi:g}]")
            hi *= 2.0
    if f(hi) <= 0:
        raise NoRoot(f"rho(P_lam) <= 1 at the bracket edge {hi:g}")
    res = optimize.minimize_scalar(lambda x: f(x), bounds=(max(lo, 0.0), hi), method="bounded",
                                   options={"xatol": 1e-10 * hi})
    a = float(res.x)
    if f(a) >= 0:
        # minimum not negative on the bracket: probe small lam (slope is mu < 0)
        a = min(1e-6, 0.5 * hi)
        if f(a) >= 0:
            raise NoRoot("could not find a point with rho(P_lam) < 1 inside the bracket")
    lam = optimize.brentq(f, a, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    Q = K.weights * mgf_matrix(K, lam)
    Q[K.weights == 0] = 0.0
    pd = perron_pair(Q, tol=1e-12)
    if abs(pd.rho - 1) > tol:
        raise NoRoot(f"root finder stopped at rho={pd.rho!r}")
    return TiltRoot(lam, pd.rho, Q, pd)


# --- Lindley supremum ---------------------------------------------------------------


@dataclass
class TiltModel:
    """Stochastic kernel ``P (x) G`` plus its tilting root and tilted Perron data."""

    kernel: SemiMarkovKernel
    lam: float | None = None
    phi: np.ndarray | None = None
    pd: PerronData | None = None

    @classmethod
    def from_kernel(cls, K: SemiMarkovKernel, bracket=None) -> "TiltModel":
        root = find_tilt_root(K, bracket)
        return cls(K, root.lam, mgf_matrix(K, root.lam), root.pd)


@dataclass
class LindleyReport:
    lam: float | None
    t: np.ndarray
    tail: np.ndarray
    tail_se: np.ndarray
    compensated: np.ndarray
    slope: np.ndarray
    prefactor: np.ndarray
    ladder_q: np.ndarray | None = None
    ladder_row_identity: list[Estimate] = field(default_factory=list)
    ladder_class: list[int] = field(default_factory=list)
    n_paths: int = 0


def simulate_supremum(K: SemiMarkovKernel, i0: int, n_paths: int, rng: np.random.Generator,
                      margin: float, max_steps: int = 1_000_000):
    """``W = sup_n S_n`` per path plus the first strict ladder epoch data.

    A path stops once ``S_n < max_k S_k - margin``. Returns ``(W, ladder_S, ladder_M)``
    with ``ladder_M = -1`` for paths without a strict ascent before stopping.
    """
    m = K.m
    cum = np.cumsum(K.weights, axis=1)
    cum[:, -1] = 1.0
    state = np.full(n_paths, i0, dtype=np.int64)
    S = np.zeros(n_paths)
    W = np.zeros(n_paths)
    lad_S = np.zeros(n_paths)
    lad_M = np.full(n_paths, -1, dtype=np.int64)
    active = np.arange(n_paths)
    for _ in range(max_steps):
        if active.size == 0:
            break
        src = state[active]
        dst = (rng.random(active.size)[:, None] >= cum[src]).sum(axis=1)
        X = np.empty(active.size)
        code = src * m + dst
        for a, b in K.edges():
            sel = code == a * m + b
            cnt = int(sel.sum())
            if cnt:
                X[sel] = K.dists[a][b].sample(rng, cnt)
        Snew = S[active] + X
        S[active] = Snew
        state[active] = dst
        first = (lad_M[active] < 0) & (Snew > 0)
        idx = active[first]
        lad_S[idx] = Snew[first]
        lad_M[idx] = dst[first]
        W[active] = np.maximum(W[active], Snew)
        active = active[Snew >= W[active] - margin]
    else:
        raise NonConvergence(f"{active.size} supremum paths still running after {max_steps} steps")
    return W, lad_S, lad_M


def _recurrent_class(T: np.ndarray) -> list[int]:
    """States of the closed strongly connected classes of a transition pattern."""
    n, labels = connected_components(T > 0, directed=True, connection="strong")
    out = []
    for c in range(n):
        members = np.flatnonzero(labels == c)
        others = np.flatnonzero(labels != c)
        if not np.any(T[np.ix_(members, others)] > 0):
            out.extend(int(x) for x in members)
    return sorted(out)


def _fit_exponential(t, p, se):
    ok = (p > 0) & np.isfinite(se) & (se > 0)
    if ok.sum() < 2:
        return float("nan"), float("nan")
    w = (p[ok] / se[ok]) ** 2
    slope, icpt = np.polyfit(t[ok], np.log(p[ok]), 1, w=np.sqrt(w))
    return float(slope), float(math.exp(icpt))


def lindley_tail(K: SemiMarkovKernel, t_grid, n_paths: int, seed: int = 0,
                 bracket=None, margin: float | None = None, starts=None) -> LindleyReport:
    """Tail of ``W = sup_n S_n`` under each start state, with the tilting diagnostics.

    For each start state ``i`` reports ``P_i(W > t)`` with standard errors, the
    compensated values ``e^{lam t} P_i(W > t)``, an exponential fit
    ``P_i(W > t) ~ C e^{slope t}`` on ``t_grid``, and the ladder kernel ``Q^>``
    estimated from the first strict ascent, with the row identity
    ``sum_j q^>_ij v_j / v_i = 1``.
    """
    t = np.asarray(t_grid, dtype=float)
    m = K.m
    starts = list(range(m)) if starts is None else list(starts)
    nonpos = all(K.dists[i][j].support()[1] <= 0 for i, j in K.edges())
    if nonpos:
        z = np.zeros((m, t.size))
        return LindleyReport(None, t, z, z.copy(), z.copy(), np.full(m, np.nan),
                             np.zeros(m), None, [], [], n_paths)
    root = find_tilt_root(K, bracket)
    lam, v = root.lam, root.pd.v
    margin = 30.0 / lam if margin is None else margin
    tail = np.zeros((m, t.size))
    se = np.zeros((m, t.size))
    slope = np.full(m, np.nan)
    pref = np.full(m, np.nan)
    qhat = np.zeros((m, m))
    ident = []
    for i in starts:
        W, lS, lM = simulate_supremum(K, i, n_paths, replicate_rng(seed, i), margin)
        hits = W[:, None] > t[None, :]
        tail[i] = hits.mean(axis=0)
        se[i] = np.sqrt(tail[i] * (1 - tail[i]) / n_paths)
        slope[i], pref[i] = _fit_exponential(t, tail[i], se[i])
        weights = np.where(lM >= 0, np.exp(lam * lS), 0.0)
        for j in range(m):
            qhat[i, j] = float((weights * (lM == j)).mean())
        row = np.where(lM >= 0, weights * v[np.maximum(lM, 0)] / v[i], 0.0)
        ident.append(_estimate(row))
    comp = tail * np.exp(lam * t)[None, :]
    cls = _recurrent_class(qhat) if np.any(qhat > 0) else []
    return LindleyReport(lam, t, tail, se, comp, slope, pref, qhat, ident, cls, n_paths)


def mm1_kernel(arrival: float = 1.0, service: float = 2.0, step: float = 1e-2) -> SemiMarkovKernel:
    """Single-state kernel with increments ``Exp(service rate)... - Exp(arrival rate)``.

    The increment is service time minus interarrival time, as a two-sided mixture law.
    """
    a, s = float(arrival), float(service)
    # Exp(s) - Exp(a): positive part Exp(s) w.p. a/(a+s), negative part -Exp(a) otherwise
    fam = parse_family(f"mix({a / (a + s)!r}: exp({s!r}), {s / (a + s)!r}: neg(exp({a!r})))")
    return SemiMarkovKernel([[1.0]], [[Dist.from_family(fam, step)]], step)


# --- branching ---------------------------------------------------------------------


@dataclass
class BranchingModel:
    """Mean offspring matrix ``M`` and lifetime laws ``G_i`` on ``(0, inf)``."""

    M: np.ndarray
    lifetimes: list[Family]
    step: float = 1e-2

    def __post_init__(self):
        self.M = np.asarray(self.M, dtype=float)
        self.lifetimes = [parse_family(g) if isinstance(g, str) else g for g in self.lifetimes]
        if len(self.lifetimes) != self.M.shape[0]:
            raise ValidationError("need one lifetime law per type")

    def phi(self, alpha: float) -> np.ndarray:
        return np.array([g.mgf(-alpha) for g in self.lifetimes])

    def rho(self, alpha: float) -> float:
        Q = self.M * self.phi(alpha)[:, None]
        return float(perron_pair(Q, tol=1e-12 * max(1.0, Q.max())).rho)


@dataclass
class MalthusianReport:
    alpha: float
    Q: np.ndarray
    pd: PerronData
    primitive: bool
    kernel: SemiMarkovKernel
    stats: KernelStats | None = None
    Z: GridFunction | None = None
    limit: np.ndarray | None = None
    right_edge: np.ndarray | None = None
    residual: float | None = None
    age_limit: np.ndarray | None = None
    age_right_edge: np.ndarray | None = None


def malthusian_root(model: BranchingModel, bracket=None) -> float:
    """Root of ``rho((mu_ij phi_i(alpha))) = 1``; the map is decreasing in ``alpha``."""
    def f(a):
        return model.rho(a) - 1.0

    def safe(a):
        try:
            return f(a)
        except DivergentMoment:
            return math.inf

    if bracket is not None:
        lo, hi = map(float, bracket)
        flo, fhi = f(lo), f(hi)
    else:
        lo, hi = -1.0, 1.0
        flo, fhi = safe(lo), f(hi)
        k = 0
        while fhi > 0:
            lo, flo, hi = hi, fhi, hi * 2
            fhi = f(hi)
            k += 1
            if k > 60:
                raise NoRoot("rho stays above 1 for all alpha")
        # move lo down until rho > 1 or the moment region ends
        k = 0
        while flo < 0:
            hi, fhi = lo, flo
            lo = lo * 2 if lo < 0 else lo - 1.0
            flo = safe(lo)
            k += 1
            if k > 60:
                raise NoRoot("rho stays below 1 for all alpha")
        if not np.isfinite(flo):
            # the moment region ends inside (lo, hi): shrink to its edge
            a, b = lo, hi
            for _ in range(200):
                c = 0.5 * (a + b)
                fc = safe(c)
                if not np.isfinite(fc):
                    a = c
                elif fc > 0:
                    lo, flo = c, fc
                    break
                else:
                    b = c
            else:
                raise NoRoot("rho < 1 up to the edge of the moment region")
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise NoRoot(f"rho - 1 has the same sign at both bracket ends ({flo:.3g}, {fhi:.3g})")
    return float(optimize.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500))


def malthusian(model: BranchingModel, bracket=None, window=(-2.0, 30.0), strict: bool = False,
               solve: bool = True, total_age: bool = False) -> MalthusianReport:
    """Malthusian parameter and the limit of ``e^{-alpha t}`` times mean population size.

    Builds the transformed kernel ``(mu_ij phi_i(alpha)) (x) F_i`` with
    ``F_i(dx) = e^{-alpha x} G_i(dx) / phi_i(alpha)`` and solves
    ``Z = z + (Q (x) F) * Z`` for ``z_i(t) = e^{-alpha t} (1 - G_i(t))``, the total
    mean count of individuals alive at ``t`` from an ancestor of type ``i``.

    Irreducibility of ``M`` is required. Primitivity is reported; with ``strict=True``
    a non-primitive ``M`` raises NotPrimitive.
    """
    M = model.M
    if not np.all(M >= 0):
        raise ValidationError("mean offspring matrix must be nonnegative")
    prim = is_primitive(M)
    if not prim:
        from .perron import strongly_connected

        if not strongly_connected(M):
            raise NotIrreducible("mean offspring matrix is reducible")
        if strict:
            raise NotPrimitive("mean offspring matrix is irreducible but not primitive")
    alpha = malthusian_root(model, bracket)
    phi = model.phi(alpha)
    Q = M * phi[:, None]
    pd = perron_pair(Q, tol=1e-12)
    m = M.shape[0]
    step = model.step
    F = []
    for g in model.lifetimes:
        tg = g.tilt(-alpha)
        F.append(Dist.from_family(tg, step) if tg is not None
                 else Dist.from_family(g, step).tilted(-alpha))
    K = SemiMarkovKernel(Q, [[F[i] if Q[i, j] > 0 else None for j in range(m)] for i in range(m)], step)
    rep = MalthusianReport(alpha, Q, pd, prim, K)
    if not solve:
        return rep
    st = stationary_drift(K, pd)
    rep.stats = st
    V = renewal_measure(K, pd, st, window=window)
    lt = model.lifetimes

    def zfun(i, t):
        t = np.asarray(t, dtype=float)
        tt = np.maximum(t, 0.0)
        return np.where(t >= 0, np.exp(-alpha * tt) * (lt[i].cont_sf(tt) + _atom_sf(lt[i], tt)), 0.0)

    z = GridFunction.from_callable(zfun, m, window, step)
    Z = solve_mre(K, pd, V, z)
    rep.Z = Z
    rep.limit = asymptotic_limit(z, pd, st)
    rep.right_edge = right_edge_value(Z)
    rep.residual = residual(Z, z, K).sup
    if total_age:
        def afun(i, t):
            return np.asarray(t, dtype=float).clip(0) * zfun(i, t)

        a = GridFunction.from_callable(afun, m, window, step)
        A = solve_mre(K, pd, V, a)
        rep.age_limit = asymptotic_limit(a, pd, st)
        rep.age_right_edge = right_edge_value(A)
    return rep


def _atom_sf(fam: Family, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    for x, w in fam.atoms():
        out = out + w * (x > t)
    return out


# --- perpetuity --------------------------------------------------------------------


@dataclass
class PerpetuityModel:
    """Markov chain of multipliers ``A_n`` on ``values`` with transition ``p``; i.i.d. ``B_n``."""

    values: np.ndarray
    p: np.ndarray
    B: Family = field(default_factory=lambda: Point(1.0))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if isinstance(self.B, str):
            self.B = parse_family(self.B)
        if np.any(self.values <= 0):
            raise ValidationError("multiplier values must be positive")
        if self.p.shape != (self.values.size, self.values.size):
            raise ValidationError("transition matrix shape does not match the values")
        if np.abs(self.p.sum(axis=1) - 1).max() > 1e-9 or np.any(self.p < 0):
            raise ValidationError("transition matrix must be stochastic")

    @property
    def pi(self) -> np.ndarray:
        return stationary_measure(perron_pair(self.p))

    @property
    def p_hat(self) -> np.ndarray:
        """Backward chain ``p_hat[s, s'] = pi_s' p[s', s] / pi_s``."""
        pi = self.pi
        return pi[None, :] * self.p.T / pi[:, None]

    def e_log_a(self) -> float:
        return float(self.pi @ np.log(self.values))

    def e_log_plus_b(self) -> float:
        return float(self.B.expect(lambda x: np.log(np.maximum(np.abs(x), 1.0))))

    def tilt_kernel(self, step: float = 1e-2) -> SemiMarkovKernel:
        """``p_hat (x) delta_{log s}``: tilting it by ``alpha`` gives ``(s^alpha p_hat)``."""
        m = self.values.size
        ph = self.p_hat
        dists = [[Dist.point(math.log(self.values[s]), step) if ph[s, t] > 0 else None
                  for t in range(m)] for s in range(m)]
        return SemiMarkovKernel(ph / ph.sum(axis=1, keepdims=True), dists, step)

    def Q(self, alpha: float) -> np.ndarray:
        return self.values[:, None] ** alpha * self.p_hat


def backward_sample(model: PerpetuityModel, n: int, rng: np.random.Generator,
                    trunc: float = 1e-12, alpha: float | None = None,
                    max_terms: int = 1_000_000):
    """Stationary ``(A_0, Y_0)`` from ``Y_0 = B_0 + A_0 B_-1 + A_0 A_-1 B_-2 + ...``.

    ``A_0 ~ pi`` and ``A_-1, A_-2, ...`` follow the backward chain. A sample stops once
    the running product falls below ``trunc``. When the tail exponent ``alpha < 1`` is
    given the level is lowered to ``trunc ** (1 / alpha)``: the neglected remainder is
    the product times a copy of ``Y``, whose tail decays only like ``t^-alpha``.
    """
    if alpha is not None and 0 < alpha < 1:
        trunc = trunc ** (1.0 / alpha)
    m = model.values.size
    cum_pi = np.cumsum(model.pi)
    cum_pi[-1] = 1.0
    cum = np.cumsum(model.p_hat, axis=1)
    cum[:, -1] = 1.0
    s = np.searchsorted(cum_pi, rng.random(n), side="right")
    a0 = s.copy()
    Y = model.B.sample(rng, n)
    prod = model.values[s].copy()
    active = np.arange(n)
    for _ in range(max_terms):
        if active.size == 0:
            break
        Y[active] += prod[active] * model.B.sample(rng, active.size)
        nxt = (rng.random(active.size)[:, None] >= cum[s[active]]).sum(axis=1)
        s[active] = nxt
        prod[active] *= model.values[nxt]
        active = active[np.abs(prod[active]) >= trunc]
    else:
        raise NonConvergence("backward series did not reach the truncation level")
    return a0, Y


def forward_sample(model: PerpetuityModel, n: int, rng: np.random.Generator, burn_in: int = 1000):
    """``(A_n, Y_n)`` after ``burn_in`` steps of ``Y_n = A_n Y_{n-1} + B_n`` from ``Y = 0``."""
    cum_pi = np.cumsum(model.pi)
    cum_pi[-1] = 1.0
    cum = np.cumsum(model.p, axis=1)
    cum[:, -1] = 1.0
    s = np.searchsorted(cum_pi, rng.random(n), side="right")
    Y = np.zeros(n)
    for _ in range(burn_in):
        s = (rng.random(n)[:, None] >= cum[s]).sum(axis=1)
        Y = model.values[s] * Y + model.B.sample(rng, n)
    return s, Y


def smoothed_tail(a: np.ndarray, Y: np.ndarray, model: PerpetuityModel, alpha: float,
                  t: np.ndarray, sign: int = 1) -> np.ndarray:
    """``Z_s(t) = (pi_s e^t)^{-1} int_0^{e^t} u^alpha P(sign * s * Y > u, A = s) du``.

    Uses ``int_0^T u^alpha 1{X > u} du = min(X^+, T)^{alpha+1} / (alpha+1)``.
    """
    pi = model.pi
    out = np.zeros((model.values.size, t.size))
    for k, sv in enumerate(model.values):
        X = np.maximum(sign * sv * Y[a == k], 0.0)
        for c, tc in enumerate(t):
            T = math.exp(tc)
            out[k, c] = (np.minimum(X, T) ** (alpha + 1)).sum() / (alpha + 1) / Y.size / (pi[k] * T)
    return out


@dataclass
class PerpetuityReport:
    alpha: float | None
    rho: float | None
    conditions: dict
    slope_plus: float
    slope_minus: float
    tail_t: np.ndarray
    tail_plus: np.ndarray
    tail_minus: np.ndarray
    smoothed_t: np.ndarray
    smoothed_plus: np.ndarray
    smoothed_minus: np.ndarray
    ks_pvalue: float | None
    n_samples: int


def tail_slope(x: np.ndarray, q_lo: float = 0.99, q_hi: float = 0.9999) -> tuple[float, np.ndarray, np.ndarray]:
    """Log-log slope of the empirical survival function between two quantiles."""
    x = np.sort(np.asarray(x, dtype=float))
    x = x[x > 0]
    n = x.size
    if n < 100:
        return float("nan"), np.zeros(0), np.zeros(0)
    lo, hi = np.quantile(x, [q_lo, q_hi])
    t = np.geomspace(lo, hi, 25)
    sf = 1.0 - np.searchsorted(x, t, side="right") / n
    ok = sf > 0
    slope = float(np.polyfit(np.log(t[ok]), np.log(sf[ok]), 1)[0])
    return slope, t, sf


def perpetuity(model: PerpetuityModel, n_samples: int, seed: int = 0, bracket=None,
               n_forward: int | None = None, burn_in: int = 1000) -> PerpetuityReport:
    """Tail exponent of the stationary perpetuity ``Y`` and its simulated counterpart.

    Solves ``rho((s^alpha p_hat_ss')) = 1`` for ``alpha > 0``, samples ``Y_0`` by the
    backward series, fits the log-log tail slope of ``P(+-Y > t)`` (expected ``-alpha``),
    computes the smoothed tail functions and compares backward and forward samplers
    with a two-sample Kolmogorov-Smirnov test.
    """
    cond = {"E_log_A": model.e_log_a(), "E_log_plus_B": model.e_log_plus_b()}
    cond["contractive"] = cond["E_log_A"] < 0
    if not cond["contractive"]:
        raise ValidationError(f"E log A = {cond['E_log_A']:.6g} is not negative")
    root = find_tilt_root(model.tilt_kernel(), bracket)
    alpha = root.lam
    a0, Y = backward_sample(model, n_samples, replicate_rng(seed, 0), alpha=alpha)
    sp, tp, fp = tail_slope(Y)
    sm, tm, fm = tail_slope(-Y)
    ts = np.linspace(0.0, math.log(max(np.quantile(np.abs(Y), 0.9999), 2.0)), 12)
    zp = smoothed_tail(a0, Y, model, alpha, ts, 1)
    zm = smoothed_tail(a0, Y, model, alpha, ts, -1)
    pval = None
    if n_forward is None:
        n_forward = min(n_samples, 100_000)
    if n_forward:
        _, Yf = forward_sample(model, n_forward, replicate_rng(seed, 1), burn_in)
        pval = float(stats.ks_2samp(Y[:n_forward], Yf).pvalue)
    return PerpetuityReport(alpha, root.rho, cond, sp, sm, tp, fp, fm, ts, zp, zm, pval, n_samples)
