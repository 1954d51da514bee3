import numpy as np
import pytest

from markov_renewal import (GridFunction, SemiMarkovKernel, WindowTooSmall, asymptotic_limit,
                            dri_check, homogeneous_probe, kernel_stats, perron_pair,
                            renewal_measure, residual, solve_mre)
from markov_renewal.mre import apply_kernel, right_edge_value

from conftest import ALT_Q

WIN = (-2.0, 30.0)


def exp_decay(i, t):
    t = np.asarray(t, dtype=float)
    return np.where(t >= 0, np.exp(-np.maximum(t, 0)), 0.0)


def unit_box(i, t):
    t = np.asarray(t, dtype=float)
    return ((t >= 0) & (t <= 1)).astype(float)


@pytest.fixture(scope="module")
def poisson():
    K = SemiMarkovKernel.from_specs([[1.0]], "exp(1)", step=1e-2)
    pd = perron_pair(K.weights)
    st = kernel_stats(K, pd)
    V = renewal_measure(K, pd, st, window=WIN)
    return K, pd, st, V


@pytest.fixture(scope="module")
def exp2(exp2_kernel, exp2_pd):
    st = kernel_stats(exp2_kernel, exp2_pd)
    V = renewal_measure(exp2_kernel, exp2_pd, st, window=WIN)
    return exp2_kernel, exp2_pd, st, V


class TestDri:
    def test_exponential(self):
        g = GridFunction.from_callable(exp_decay, 1, WIN, 1e-2)
        assert dri_check(g, [1.0]).dri

    def test_harmonic_decay(self):
        g = GridFunction.from_callable(lambda i, t: 1 / (1 + np.abs(t)), 1, WIN, 1e-2)
        assert not dri_check(g, [1.0]).dri

    def test_indicator(self):
        g = GridFunction.from_callable(unit_box, 1, WIN, 1e-2)
        assert dri_check(g, [1.0]).dri

    def test_window_only_without_source(self):
        g = GridFunction.from_callable(exp_decay, 1, WIN, 1e-2)
        rep = dri_check(GridFunction(g.window, g.step, g.values), [1.0])
        assert rep.window_only


class TestSolve:
    def test_zero_forcing(self, poisson):
        K, pd, _, V = poisson
        Z = solve_mre(K, pd, V, GridFunction.zeros(1, WIN, K.step))
        assert np.abs(Z.values).max() == 0.0

    def test_poisson_closed_form(self, poisson):
        K, pd, _, V = poisson
        Z = solve_mre(K, pd, V, GridFunction.from_callable(exp_decay, 1, WIN, K.step))
        sel = Z.cell_left >= 0
        # cell averages of a unit solution on a 1e-2 grid; bias is second order in the step
        np.testing.assert_allclose(Z.values[0, sel], 1.0, atol=1e-4)
        assert np.abs(Z.values[0, Z.cell_left < -0.05]).max() < 1e-14

    def test_telescoping(self, exp2):
        K, pd, _, V = exp2
        H = K.harmonic(pd)
        from markov_renewal import renewal_measure as rm

        VH = rm(H, perron_pair(H.weights), window=WIN)
        g = GridFunction.from_callable(
            lambda i, t: np.where(t >= 0, (1 + i) * (1 - np.exp(-np.maximum(t, 0))), 0.0), 2, WIN, K.step)
        z = g - apply_kernel(H, g, "zero")
        Z = solve_mre(H, perron_pair(H.weights), VH, z)
        assert np.abs(Z.values - g.values).max() < 1e-6

    def test_window_too_small(self, poisson):
        K, pd, _, V = poisson
        z = GridFunction.from_callable(exp_decay, 1, (-2.0, 40.0), K.step)
        with pytest.raises(WindowTooSmall):
            solve_mre(K, pd, V, z)


class TestResidual:
    def test_solution_family(self, exp2):
        K, pd, _, V = exp2
        z = GridFunction.from_callable(unit_box, 2, WIN, K.step)
        Z = solve_mre(K, pd, V, z)
        r0 = residual(Z, z, K).sup
        assert r0 < 1e-6
        for c in (-1.0, 1.0, 10.0):
            assert abs(residual(Z.plus_multiple(c, pd.v), z, K).sup - r0) < 1e-9

    def test_perturbation_detected(self, exp2):
        K, pd, _, V = exp2
        z = GridFunction.from_callable(unit_box, 2, WIN, K.step)
        Z = solve_mre(K, pd, V, z)
        bumped = Z + np.array([0.1, 0.0])
        assert residual(bumped, z, K).sup > 0.05


class TestProbe:
    def test_multiple_of_v(self, exp2):
        K, pd, _, _ = exp2
        Z = GridFunction.constant(3 * pd.v, WIN, K.step)
        rep = homogeneous_probe(Z, K, pd, n_iter=5)
        assert rep.c == pytest.approx(3.0)
        assert rep.trace.max() < 1e-12
        assert rep.homogeneous_residual < 1e-12

    def test_sine_not_harmonic(self, exp2):
        K, pd, _, _ = exp2
        Z = GridFunction.from_callable(lambda i, t: pd.v[i] * np.sin(t), 2, WIN, K.step)
        rep = homogeneous_probe(Z, K, pd, n_iter=2)
        assert rep.trace[0] > 0.1
        assert rep.homogeneous_residual > 0.1

    def test_bump_decays(self, exp2):
        K, pd, _, _ = exp2
        bump = lambda i, t: pd.v[i] * (1 + 0.5 * np.exp(-((t - 3.0) ** 2)))  # noqa: E731
        Z = GridFunction.from_callable(bump, 2, WIN, K.step)
        rep = homogeneous_probe(Z, K, pd, n_iter=60, interior=(-2.0, 10.0))
        assert rep.trace[-1] < 1e-4 < rep.trace[0]


class TestAsymptotics:
    def test_poisson(self, poisson):
        K, pd, st, V = poisson
        z = GridFunction.from_callable(exp_decay, 1, WIN, K.step)
        assert asymptotic_limit(z, pd, st)[0] == pytest.approx(1.0, abs=1e-9)

    def test_zero(self, poisson):
        K, pd, st, _ = poisson
        assert asymptotic_limit(GridFunction.zeros(1, WIN, K.step), pd, st)[0] == 0.0

    def test_two_state_box(self, exp2):
        K, pd, st, V = exp2
        z = GridFunction.from_callable(unit_box, 2, WIN, K.step)
        lim = asymptotic_limit(z, pd, st)
        np.testing.assert_allclose(lim, pd.v, rtol=1e-9)
        Z = solve_mre(K, pd, V, z)
        np.testing.assert_allclose(right_edge_value(Z), lim, rtol=0.02)

    def test_left_edge_vanishes(self, exp2):
        K, pd, _, V = exp2
        z = GridFunction.from_callable(unit_box, 2, WIN, K.step)
        Z = solve_mre(K, pd, V, z)
        assert np.abs(Z.values[:, :3]).max() <= 10 * V.report.residual + 1e-12
        assert Z.flags["L"] and Z.flags["window_only"]
