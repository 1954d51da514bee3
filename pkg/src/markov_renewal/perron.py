"""Perron-Frobenius data of nonnegative matrices.

Power iteration is run on the shifted matrix ``Q + c*I`` (``c > 0``), which is
primitive whenever ``Q`` is irreducible, so periodic matrices such as the
alternating chain converge without oscillation. The left and right Perron
vectors are normalized so that ``sum(u) == 1`` and ``u @ v == 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import NonConvergence, NotIrreducible, NotQuasiStochastic, ValidationError

DEFAULT_TOL = 1e-10
MAX_ITER = 200_000


def as_qs_matrix(Q) -> np.ndarray:
    """Validate and return ``Q`` as a float ``(m, m)`` array."""
    Q = np.array(Q, dtype=float)
    if Q.ndim == 0:
        Q = Q.reshape(1, 1)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] < 1:
        raise ValidationError(f"expected a square matrix, got shape {Q.shape}")
    if not np.all(np.isfinite(Q)):
        raise ValidationError("matrix has non-finite entries")
    if np.any(Q < 0):
        raise ValidationError("matrix has negative entries")
    return Q


@dataclass(frozen=True)
class PerronData:
    """Perron root and normalized eigenvectors of a nonnegative matrix.

    Attributes
    ----------
    rho : float
        Spectral radius.
    u, v : ndarray
        Positive left/right eigenvectors with ``sum(u) = 1`` and ``u @ v = 1``.
    pi : ndarray
        ``u * v``, a probability vector.
    tol_used : float
        Residual tolerance the eigenpair satisfies.
    """

    rho: float
    u: np.ndarray
    v: np.ndarray
    pi: np.ndarray
    tol_used: float

    @property
    def m(self) -> int:
        return len(self.u)

    @property
    def D(self) -> np.ndarray:
        return np.diag(self.v)


def strongly_connected(Q) -> bool:
    """True iff the digraph with an edge ``i -> j`` for ``q_ij > 0`` is strongly connected."""
    Q = as_qs_matrix(Q)
    if Q.shape[0] == 1:
        return True
    n, _ = connected_components(Q > 0, directed=True, connection="strong")
    return n == 1


def is_primitive(Q) -> bool:
    """Irreducible and aperiodic, i.e. some power of ``Q`` is strictly positive."""
    Q = as_qs_matrix(Q)
    if not strongly_connected(Q):
        return False
    m = Q.shape[0]
    A = (Q > 0).astype(float)
    B = A.copy()
    # Wielandt bound on the primitivity index
    for _ in range((m - 1) ** 2 + 1):
        if np.all(B > 0):
            return True
        B = ((B @ A) > 0).astype(float)
    return bool(np.all(B > 0))


def _power(M: np.ndarray, shift: float, tol: float, max_iter: int):
    """Dominant eigenvector of ``M + shift*I`` by normalized power iteration."""
    m = M.shape[0]
    A = M + shift * np.eye(m)
    x = np.full(m, 1.0 / m)
    scale = max(np.abs(M).max(), 1e-300)
    best, best_x, stall = np.inf, x, 0
    for _ in range(max_iter):
        x = A @ x
        x /= x.sum()
        lam = (M @ x) @ x / (x @ x)
        res = np.abs(M @ x - lam * x).max() / scale
        if res < best:
            if res < 0.999 * best:
                stall = 0
            best, best_x = res, x
        else:
            stall += 1
        # stop at machine precision or once progress stalls
        if res <= 1e-16 or stall > 500:
            break
    if best > tol:
        raise NonConvergence(f"power iteration stalled at residual {best:.3e} > tol={tol}")
    return best_x


def _check_irreducible(Q: np.ndarray) -> None:
    if not strongly_connected(Q):
        raise NotIrreducible("matrix is reducible (its digraph is not strongly connected)")


def spectral_radius(Q, tol: float = DEFAULT_TOL) -> float:
    """Perron root of an irreducible nonnegative matrix."""
    return perron_pair(Q, tol).rho


def perron_pair(Q, tol: float = DEFAULT_TOL, max_iter: int = MAX_ITER) -> PerronData:
    """Perron root with left/right eigenvectors normalized by ``sum(u)=1, u@v=1``.

    ``rho != 1`` is allowed here; callers that need quasi-stochasticity check it.
    """
    Q = as_qs_matrix(Q)
    _check_irreducible(Q)
    m = Q.shape[0]
    if m == 1:
        one = np.ones(1)
        return PerronData(float(Q[0, 0]), one, one.copy(), one.copy(), tol)
    shift = max(np.abs(Q).sum(axis=1).max() / 2.0, 1e-300)
    v = _power(Q, shift, tol, max_iter)
    u = _power(Q.T, shift, tol, max_iter)
    if np.any(v <= 0) or np.any(u <= 0):
        raise NonConvergence("Perron vectors are not strictly positive")
    rho = float(u @ Q @ v / (u @ v))
    u = u / u.sum()
    v = v / (u @ v)
    scale = max(1.0, abs(rho))
    res = max(np.abs(u @ Q - rho * u).max(), np.abs(Q @ v - rho * v).max())
    if res > tol * scale:
        raise NonConvergence(f"eigen-residual {res:.3e} exceeds tol={tol}")
    return PerronData(rho, u, v, u * v, tol)


def harmonic_transform(Q, pd: PerronData | None = None, tol: float = DEFAULT_TOL):
    """Return ``(P, D)`` with ``P = D^-1 Q D`` stochastic and ``D = diag(v)``.

    Raises NotQuasiStochastic if the Perron root differs from 1 by more than ``tol``.
    """
    Q = as_qs_matrix(Q)
    if pd is None:
        pd = perron_pair(Q, tol)
    if abs(pd.rho - 1.0) > tol:
        raise NotQuasiStochastic(f"Perron root {pd.rho!r} is not 1 (tol={tol})")
    v = pd.v
    P = Q * v[None, :] / v[:, None]
    # remove the O(tol) row-sum defect left by the eigen-solver
    P = P / P.sum(axis=1, keepdims=True)
    return P, np.diag(v)


def stationary_measure(pd: PerronData) -> np.ndarray:
    """Stationary law ``pi_i = u_i v_i`` of the harmonic transform."""
    pi = pd.u * pd.v
    return pi / pi.sum()
