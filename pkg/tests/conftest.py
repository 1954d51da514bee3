import numpy as np
import pytest

from markov_renewal import SemiMarkovKernel, perron_pair

ALT_Q = np.array([[0.0, 2.0], [0.5, 0.0]])


def random_irreducible(rng, m, stochastic=False, density=0.5):
    """Random irreducible nonnegative matrix: a Hamiltonian cycle plus random edges."""
    A = (rng.random((m, m)) < density) * rng.random((m, m))
    perm = rng.permutation(m)
    for k in range(m):
        A[perm[k], perm[(k + 1) % m]] = 0.1 + rng.random()
    if stochastic:
        A = A / A.sum(axis=1, keepdims=True)
    return A


@pytest.fixture
def alt_q():
    return ALT_Q.copy()


@pytest.fixture(scope="session")
def exp2_kernel():
    """Alternating 2-state weights with Exp(1) laws on a 1e-2 grid."""
    return SemiMarkovKernel.from_specs(ALT_Q, "exp(1)", step=1e-2)


@pytest.fixture(scope="session")
def exp2_pd(exp2_kernel):
    return perron_pair(exp2_kernel.weights)


@pytest.fixture(scope="session")
def delta_kernel():
    """Alternating 2-state weights with unit point masses."""
    return SemiMarkovKernel.from_specs(ALT_Q, "point(1)", step=1e-2)


@pytest.fixture(scope="session")
def poisson_kernel():
    return SemiMarkovKernel.from_specs([[1.0]], "exp(1)", step=1e-3)
