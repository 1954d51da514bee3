import math

import numpy as np
import pytest
from scipy import optimize

from markov_renewal import (BranchingModel, NoRoot, NotIrreducible, NotPrimitive,
                            PerpetuityModel, SemiMarkovKernel, ValidationError, find_tilt_root,
                            lindley_tail, malthusian, mm1_kernel, perpetuity, perron_pair)
from markov_renewal.apps import backward_sample, forward_sample, malthusian_root, tail_slope
from markov_renewal.simulate import replicate_rng, tilt_identity

NORMAL_P = np.array([[0.3, 0.7], [0.6, 0.4]])
NORMAL_SPECS = [["normal(-0.5, 1)", "normal(-1, 1)"], ["normal(0.5, 1)", "normal(-0.5, 1)"]]


def rho2(A):
    """Spectral radius of a nonnegative 2x2 matrix."""
    tr, det = A[0, 0] + A[1, 1], A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    return 0.5 * (tr + math.sqrt(tr * tr - 4 * det))


class TestTiltRoot:
    def test_mm1(self):
        root = find_tilt_root(mm1_kernel())
        assert root.lam == pytest.approx(1.0, abs=1e-9)
        assert root.rho == pytest.approx(1.0, abs=1e-10)

    def test_root_excludes_zero(self):
        K = SemiMarkovKernel.from_specs(NORMAL_P, NORMAL_SPECS)
        root = find_tilt_root(K)
        assert root.lam > 0.1
        assert abs(root.rho - 1) <= 1e-10

    def test_negative_point_mass(self):
        with pytest.raises(NoRoot):
            find_tilt_root(SemiMarkovKernel.from_specs([[1.0]], "point(-1)"))

    def test_positive_drift(self):
        with pytest.raises(NoRoot):
            find_tilt_root(SemiMarkovKernel.from_specs([[1.0]], "normal(0.5, 1)"))

    def test_requires_stochastic(self):
        with pytest.raises(ValidationError):
            find_tilt_root(SemiMarkovKernel.from_specs([[0, 2], [0.5, 0]], "normal(-1, 1)"))


class TestLindley:
    def test_mm1_tail(self):
        rep = lindley_tail(mm1_kernel(), np.linspace(0, 4, 9), 20_000, seed=1)
        assert rep.lam == pytest.approx(1.0, abs=1e-9)
        assert rep.slope[0] == pytest.approx(-1.0, abs=0.1)
        assert rep.prefactor[0] == pytest.approx(0.5, abs=0.05)
        # ladder height is defective: P(sigma > finite) = P(W > 0) = 1/2
        assert abs(rep.tail[0, 0] - 0.5) < 3 * rep.tail_se[0, 0]

    def test_nonpositive_increments(self):
        rep = lindley_tail(SemiMarkovKernel.from_specs([[1.0]], "uniform(-2, 0)"), [0.0, 1.0], 100)
        assert np.all(rep.tail == 0)
        assert rep.lam is None

    def test_row_identity(self):
        K = SemiMarkovKernel.from_specs(NORMAL_P, NORMAL_SPECS)
        rep = lindley_tail(K, np.linspace(0, 3, 7), 20_000, seed=2)
        for est in rep.ladder_row_identity:
            assert est.within(1.0)

    def test_tilt_identity(self):
        K = SemiMarkovKernel.from_specs(NORMAL_P, NORMAL_SPECS)
        lam = find_tilt_root(K).lam
        for i in range(2):
            assert tilt_identity(K, lam, i, 20_000, seed=5 + i).within(1.0)

    def test_deterministic(self):
        a = lindley_tail(mm1_kernel(), [0.0, 1.0], 2000, seed=3)
        b = lindley_tail(mm1_kernel(), [0.0, 1.0], 2000, seed=3)
        np.testing.assert_array_equal(a.tail, b.tail)


class TestBranching:
    def test_yule(self):
        rep = malthusian(BranchingModel([[2.0]], ["exp(1)"]))
        assert rep.alpha == pytest.approx(1.0, abs=1e-9)
        assert rep.pd.rho == pytest.approx(1.0, abs=1e-9)
        assert rep.limit[0] == pytest.approx(1.0, rel=1e-6)
        assert rep.right_edge[0] == pytest.approx(rep.limit[0], rel=0.03)
        assert rep.residual < 1e-6

    def test_two_types(self):
        rep = malthusian(BranchingModel([[0, 2], [2, 0]], ["exp(1)", "exp(1)"]))
        assert rep.alpha == pytest.approx(1.0, abs=1e-9)
        assert not rep.primitive
        np.testing.assert_allclose(rep.right_edge, rep.limit, rtol=0.03)

    def test_critical(self):
        assert malthusian_root(BranchingModel([[1.0]], ["exp(1)"])) == pytest.approx(0.0, abs=1e-9)

    def test_primitive_strict(self):
        with pytest.raises(NotPrimitive):
            malthusian(BranchingModel([[0, 2], [2, 0]], ["exp(1)", "exp(1)"]), strict=True, solve=False)

    def test_reducible(self):
        with pytest.raises(NotIrreducible):
            malthusian(BranchingModel([[1, 1], [0, 1]], ["exp(1)", "exp(1)"]), solve=False)

    def test_transformed_kernel_quasi_stochastic(self):
        model = BranchingModel([[0.5, 1.5], [1.0, 0.8]], ["exp(1)", "uniform(0.5, 2)"])
        rep = malthusian(model, solve=False)
        assert perron_pair(rep.Q).rho == pytest.approx(1.0, abs=1e-9)
        assert model.rho(rep.alpha) == pytest.approx(1.0, abs=1e-9)


class TestPerpetuity:
    def test_equal_rows(self):
        model = PerpetuityModel([0.5, 1.5], [[0.5, 0.5], [0.5, 0.5]])
        rep = perpetuity(model, 100_000, seed=0)
        assert rep.alpha == pytest.approx(1.0, abs=1e-9)
        assert rep.slope_plus == pytest.approx(-1.0, abs=0.15)
        assert rep.ks_pvalue > 0.01
        assert rep.conditions["contractive"]

    def test_deterministic_multiplier(self):
        with pytest.raises(NoRoot):
            perpetuity(PerpetuityModel([0.5], [[1.0]]), 1000)
        _, Y = backward_sample(PerpetuityModel([0.5], [[1.0]]), 10, replicate_rng(0))
        np.testing.assert_allclose(Y, 2.0, rtol=1e-11)

    def test_sticky_chain(self):
        p = np.array([[0.9, 0.1], [0.1, 0.9]])
        s = np.array([0.5, 1.5])
        ref = optimize.brentq(lambda a: rho2(np.diag(s ** a) @ p) - 1, 1e-3, 5, xtol=1e-14)
        model = PerpetuityModel(s, p)
        rep = perpetuity(model, 50_000, seed=1)
        assert rep.alpha == pytest.approx(ref, abs=1e-9)
        assert rep.rho == pytest.approx(1.0, abs=1e-10)
        assert rep.ks_pvalue > 0.01

    def test_samplers_reproducible(self):
        model = PerpetuityModel([0.5, 1.5], [[0.5, 0.5], [0.5, 0.5]])
        a = forward_sample(model, 100, replicate_rng(4), burn_in=50)[1]
        b = forward_sample(model, 100, replicate_rng(4), burn_in=50)[1]
        np.testing.assert_array_equal(a, b)

    def test_tail_slope_pareto(self):
        x = np.random.default_rng(0).pareto(1.0, 200_000) + 1
        slope, _, _ = tail_slope(x)
        assert slope == pytest.approx(-1.0, abs=0.05)

    def test_invalid(self):
        with pytest.raises(ValidationError):
            PerpetuityModel([0.5, -1.0], [[0.5, 0.5], [0.5, 0.5]])
        with pytest.raises(ValidationError):
            PerpetuityModel([0.5, 1.5], [[0.6, 0.5], [0.5, 0.5]])
