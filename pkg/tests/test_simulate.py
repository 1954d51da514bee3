import numpy as np
import pytest
from scipy import stats

from markov_renewal import (InsufficientVisits, SemiMarkovKernel, ValidationError,
                            cycle_estimators, empirical_renewal, markov_renewal_measure,
                            perron_pair, replicate_rng, sample_path, sample_paths, tilted_kernel)
from markov_renewal.apps import prob_drift
from markov_renewal.simulate import (first_return_sums, ladder_epochs, return_cycles,
                                     slab_estimate, stationary_expectation, tilt_identity)

ALT_P = np.array([[0.0, 1.0], [1.0, 0.0]])
MIX_P = np.array([[0.3, 0.7], [0.6, 0.4]])
MIX_SPECS = [["exp(1)", "normal(1, 0.5)"], ["uniform(0, 2)", "exp(2)"]]


@pytest.fixture(scope="module")
def alt_delta():
    return SemiMarkovKernel.from_specs(ALT_P, "point(1)")


@pytest.fixture(scope="module")
def mixed():
    return SemiMarkovKernel.from_specs(MIX_P, MIX_SPECS)


class TestPaths:
    def test_deterministic_increments(self):
        K = SemiMarkovKernel.from_specs([[1.0]], "point(1)")
        p = sample_path(K, 0, 50, seed=1)
        np.testing.assert_allclose(p.partial_sums, np.arange(51))

    def test_alternating_states(self, alt_delta):
        p = sample_path(alt_delta, 0, 9, seed=3)
        assert p.states.tolist() == [0, 1] * 5

    def test_seed_reproducible(self, mixed):
        a = sample_path(mixed, 0, 200, seed=42)
        b = sample_path(mixed, 0, 200, seed=42)
        c = sample_path(mixed, 0, 200, seed=43)
        assert np.array_equal(a.states, b.states) and np.array_equal(a.increments, b.increments)
        assert not np.array_equal(a.increments, c.increments)

    def test_replicate_streams_differ(self):
        x = replicate_rng(5, 0).random(4)
        y = replicate_rng(5, 1).random(4)
        assert not np.allclose(x, y)
        np.testing.assert_array_equal(x, replicate_rng(5, 0).random(4))

    def test_requires_stochastic(self):
        K = SemiMarkovKernel.from_specs([[0.0, 2.0], [0.5, 0.0]], "point(1)")
        with pytest.raises(ValidationError):
            sample_path(K, 0, 10, seed=0)

    def test_csv(self, mixed, tmp_path):
        sample_path(mixed, 0, 5, seed=0).to_csv(tmp_path / "p.csv")
        lines = (tmp_path / "p.csv").read_text().splitlines()
        assert lines[0] == "n,M_n,X_n,S_n" and len(lines) == 7


class TestCycles:
    def test_alternating_returns(self, alt_delta):
        sigma, _ = return_cycles(sample_path(alt_delta, 0, 20, seed=0), 0)
        np.testing.assert_array_equal(sigma, 2 * np.arange(1, 11))

    def test_single_state_returns(self):
        K = SemiMarkovKernel.from_specs([[1.0]], "exp(1)")
        sigma, _ = return_cycles(sample_path(K, 0, 10, seed=0), 0)
        np.testing.assert_array_equal(sigma, np.arange(1, 11))

    def test_insufficient(self, alt_delta):
        with pytest.raises(InsufficientVisits):
            return_cycles(sample_path(alt_delta, 0, 2, seed=0), 0)
        with pytest.raises(InsufficientVisits):
            return_cycles(sample_path(alt_delta, 1, 10, seed=0), 0)

    def test_alternating_estimators(self, alt_delta):
        ce = cycle_estimators(sample_path(alt_delta, 0, 200, seed=0), 0)
        assert ce.drift.value == 2.0 and ce.drift.se == 0.0
        assert ce.occupation[1].value == 1.0

    def test_drift_and_occupation(self, mixed):
        pd = perron_pair(mixed.weights)
        mu = prob_drift(mixed)
        ce = cycle_estimators(sample_path(mixed, 0, 40_000, seed=9), 0)
        assert ce.n_cycles > 10_000
        assert ce.drift.within(mu / pd.pi[0])
        for j in range(2):
            assert ce.occupation[j].within(pd.pi[j] / pd.pi[0])

    def test_functional(self, mixed):
        pd = perron_pair(mixed.weights)
        g = lambda j, x: (j + 1) * np.cos(x)  # noqa: E731
        ce = cycle_estimators(sample_path(mixed, 0, 40_000, seed=10), 0, g)
        target = stationary_expectation(mixed, pd.pi, g, i=0)
        assert ce.functional.within(target)

    def test_cycles_identically_distributed(self, mixed):
        p = sample_path(mixed, 0, 40_000, seed=11)
        sigma, S = return_cycles(p, 0)
        inc = np.diff(np.concatenate([[0.0], S]))
        half = inc.size // 2
        assert stats.ks_2samp(inc[:half], inc[half:]).pvalue > 0.01


def test_strong_law(mixed):
    batch = sample_paths(mixed, 0, 100_000, 10, replicate_rng(1, 0))
    means = batch.partial_sums[:, -1] / 100_000
    se = means.std(ddof=1) / np.sqrt(means.size)
    assert abs(means.mean() - prob_drift(mixed)) < 3 * se


class TestEmpirical:
    def test_alternating_atoms(self, alt_delta):
        batch = sample_paths(alt_delta, 0, 30, 5, replicate_rng(0, 0))
        emp = empirical_renewal(batch, 0, (-1.0, 10.0), 1e-2, atomic=True)
        e = emp.measure[0, 0]
        assert e.atoms_w[np.argmin(np.abs(e.atoms_x - 2.0))] == 1.0

    def test_poisson_slabs(self):
        K = SemiMarkovKernel.from_specs([[1.0]], "exp(1)")
        batch = sample_paths(K, 0, 60, 4000, replicate_rng(2, 0))
        for t in (0.5, 5.0, 20.0):
            assert slab_estimate(batch, 0, 0, t, 1.0).within(1.0)

    def test_matches_analytic(self, mixed):
        pd = perron_pair(mixed.weights)
        U = markov_renewal_measure(mixed, pd, window=(-5.0, 30.0))
        batch = sample_paths(mixed, 0, 120, 4000, replicate_rng(3, 0))
        for j in range(2):
            for t in (0.0, 5.0, 10.0, 15.0):
                assert slab_estimate(batch, 0, j, t, 2.0).within(U.slab(0, j, t, 2.0))
        emp = empirical_renewal(batch, 0, (0.0, 20.0), 0.5)
        k = 10
        cell = emp.measure[0, 1]
        ana = U.slab(0, 1, cell.cell_left[k], 0.5)
        assert abs(cell.cells[k] - ana) <= 3 * emp.se[0][1][k]


class TestLadder:
    def test_unit_steps(self):
        K = SemiMarkovKernel.from_specs([[1.0]], "point(1)")
        lad = ladder_epochs(sample_path(K, 0, 10, seed=0))
        np.testing.assert_array_equal(lad.epochs, np.arange(1, 11))

    def test_negative_steps(self):
        K = SemiMarkovKernel.from_specs([[1.0]], "point(-1)")
        assert ladder_epochs(sample_path(K, 0, 10, seed=0)).epochs.size == 0


class TestTilt:
    def test_zero_tilt(self, mixed):
        tk = tilted_kernel(mixed, 0.0)
        np.testing.assert_allclose(tk.Q, MIX_P)
        np.testing.assert_allclose(tk.sampler.weights, MIX_P, atol=1e-12)

    def test_difference_of_exponentials(self):
        K = SemiMarkovKernel.from_specs(
            [[1.0]], "mix(0.3333333333333333: exp(2), 0.6666666666666667: neg(exp(1)))")
        tk = tilted_kernel(K, 1.0)
        assert tk.Q[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert tk.sampler.dists[0][0].family.mean() > 0

    def test_tilted_return_certain(self):
        K = SemiMarkovKernel.from_specs(MIX_P, [["normal(-0.5, 1)", "normal(-1, 1)"],
                                                ["normal(0.5, 1)", "normal(-0.5, 1)"]])
        from markov_renewal import find_tilt_root

        lam = find_tilt_root(K).lam
        tk = tilted_kernel(K, lam)
        _, done = first_return_sums(tk.sampler, 0, 5000, replicate_rng(0, 0))
        assert done.all()
        assert tilt_identity(K, lam, 0, 20_000, seed=4).within(1.0)
