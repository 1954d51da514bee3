"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` to see the report lines
interleaved with the test names; they are also printed when output is captured.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from markov_renewal import (BranchingModel, GridFunction, PerpetuityModel, SemiMarkovKernel,
                            blackwell_check, cycle_estimators, find_tilt_root,
                            harmonic_transform, homogeneous_probe, kernel_stats, lindley_tail,
                            local_bound_check, malthusian, markov_renewal_measure, mm1_kernel,
                            perpetuity, perron_pair, renewal_measure, residual, sample_path,
                            solve_mre, stone_density, taboo_occupation, uv_transform)
from markov_renewal.apps import prob_drift
from markov_renewal.kernel import convolve
from markov_renewal.mre import asymptotic_limit, right_edge_value
from markov_renewal.renewal import slab_masses
from markov_renewal.simulate import stationary_expectation
from markov_renewal.cli import run

from conftest import ALT_Q, random_irreducible

CONFIGS = Path(__file__).resolve().parents[1] / "examples" / "configs"


@pytest.fixture
def report(capsys):
    def emit(n, label, checks, elapsed=None):
        ok = all(bool(c) for _, c in checks)
        failed = [name for name, c in checks if not c]
        tail = f" ({elapsed:.1f}s)" if elapsed is not None else ""
        line = f"[acceptance] criterion {n} {'PASS' if ok else 'FAIL'}: {label}{tail}"
        if failed:
            line += " | failed: " + ", ".join(failed)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


def first_cycles(K, i, n_cycles, seed):
    """Path from ``i`` cut at its ``n_cycles``-th return to ``i``."""
    from markov_renewal.simulate import PathRecord, return_cycles

    pi = perron_pair(K.weights).pi
    path = sample_path(K, i, int(1.5 * n_cycles / pi[i]) + 1000, seed=seed)
    sigma, _ = return_cycles(path, i, min_returns=n_cycles)
    s = int(sigma[n_cycles - 1])
    return PathRecord(seed, path.states[:s + 1], path.increments[:s], path.partial_sums[:s + 1])


def exp_decay(i, t):
    t = np.asarray(t, dtype=float)
    return np.where(t >= 0, np.exp(-np.maximum(t, 0)), 0.0)


def unit_box(i, t):
    t = np.asarray(t, dtype=float)
    return ((t >= 0) & (t <= 1)).astype(float)


@pytest.fixture(scope="module")
def exp2_window():
    K = SemiMarkovKernel.from_specs(ALT_Q, "exp(1)", step=1e-2)
    pd = perron_pair(K.weights)
    st = kernel_stats(K, pd)
    t0 = time.perf_counter()
    V = renewal_measure(K, pd, st, window=(-10.0, 60.0))
    return K, pd, st, V, time.perf_counter() - t0


def test_criterion_1_perron(report):
    t0 = time.perf_counter()
    pd = perron_pair(ALT_Q)
    P, _ = harmonic_transform(ALT_Q, pd)
    checks = [
        ("u", np.abs(pd.u - [1 / 3, 2 / 3]).max() <= 1e-10),
        ("v", np.abs(pd.v - [1.5, 0.75]).max() <= 1e-10),
        ("pi", np.abs(pd.pi - [0.5, 0.5]).max() <= 1e-10),
        ("P antidiagonal", np.abs(P - [[0, 1], [1, 0]]).max() <= 1e-10),
    ]
    rng = np.random.default_rng(20240101)
    worst_rho = worst_map = 0.0
    for _ in range(100):
        m = int(rng.integers(1, 9))
        Pm = random_irreducible(rng, m, stochastic=True)
        pdm = perron_pair(Pm)
        H, _ = harmonic_transform(Pm, pdm)
        worst_rho = max(worst_rho, abs(pdm.rho - 1))
        worst_map = max(worst_map, np.abs(H - Pm).max())
    elapsed = time.perf_counter() - t0
    checks += [("rho = 1", worst_rho <= 1e-10), ("transform is identity", worst_map <= 1e-12),
               ("runtime < 5 s", elapsed < 5)]
    report(1, f"closed form + 100 random matrices, |rho-1| <= {worst_rho:.1e}, "
              f"|P-Q| <= {worst_map:.1e}", checks, elapsed)


def test_criterion_2_renewal_oracles(report):
    t0 = time.perf_counter()
    K = SemiMarkovKernel.from_specs([[1.0]], "exp(1)", step=1e-3)
    pd = perron_pair(K.weights)
    window, margin = (-1.0, 20.0), 1.0
    V = renewal_measure(K, pd, window=window)
    rng = np.random.default_rng(7)
    hi = window[1] - margin
    t = np.concatenate([np.arange(0.0, hi, 0.25), rng.uniform(0.0, hi - 0.5, 400)])
    worst = 0.0
    for h in (0.05, 0.5, 1.0, 2.5):
        tt = t[t + h <= hi]
        worst = max(worst, np.abs(V.slab(0, 0, tt, h) - h).max())
    Kd = SemiMarkovKernel.from_specs(ALT_Q, "point(1)", step=1e-2)
    Vd = renewal_measure(Kd, perron_pair(ALT_Q), window=(-1.0, 30.0))
    e = Vd[0, 0]
    atoms_ok = (np.allclose(e.atoms_x, np.arange(0, 31, 2), atol=1e-12)
                and np.abs(e.atoms_w - 1).max() <= 1e-9 and not np.any(e.cells))
    elapsed = time.perf_counter() - t0
    report(2, f"Poisson slabs max error {worst:.2e}; alternating atoms at even integers",
           [("slabs within 1e-5", worst <= 1e-5), ("atoms 1 +- 1e-9", atoms_ok),
            ("runtime < 30 s", elapsed < 30)], elapsed)


def test_criterion_3_blackwell(report, exp2_window):
    K, pd, st, V, build = exp2_window
    t0 = time.perf_counter()
    rows = blackwell_check(V, pd, st, h=1.0)
    rel = max(r.abs_error / r.limit for r in rows)
    left = max(r.left_increment for r in rows)
    # sweep the whole first unit of the window for the left edge
    left_sweep = max(float(V.slab(i, j, np.linspace(-10, -9, 21), 1.0).max())
                     for i in range(2) for j in range(2))
    elapsed = build + time.perf_counter() - t0
    report(3, f"right-quarter max rel error {rel:.2e}, left increments {max(left, left_sweep):.1e}",
           [("within 2%", rel <= 0.02), ("left < 1e-3", max(left, left_sweep) < 1e-3),
            ("runtime < 60 s", elapsed < 60)], elapsed)


def test_criterion_4_stone(report, exp2_window):
    K, pd, st, V, _ = exp2_window
    sd = stone_density(V, pd, st, K)
    rel = float(sd.rel_error.max())
    report(4, f"density right-edge max rel error {rel:.2e}",
           [("within 3%", rel <= 0.03), ("nonnegative", sd.nonnegative)])


def test_criterion_5_identities(report):
    t0 = time.perf_counter()
    W = np.array([[0.2, 0.5, 0.3], [0.6, 0.0, 0.4], [0.1, 0.9, 0.0]]) * 1.0
    specs = [["exp(1)", "normal(1, 0.5)", "uniform(0, 2)"], ["exp(2)", None, "point(0.5)"],
             ["normal(0.5, 1)", "exp(1)", None]]
    K = SemiMarkovKernel.from_specs(W, specs, step=1e-2)
    pd = perron_pair(K.weights)
    window = (-5.0, 30.0)
    U = markov_renewal_measure(K, pd, window=window)
    V = renewal_measure(K, pd, window=window)
    DUD = uv_transform(U, pd, "U->V")
    uv_err = max(max(np.abs(V[i, j].cells - DUD[i, j].cells).max(initial=0),
                     np.abs(V[i, j].atoms_w - DUD[i, j].atoms_w).max(initial=0))
                 for i in range(3) for j in range(3))
    t = np.arange(0.0, 25.0, 0.25)
    fac_err = 0.0
    for i in range(3):
        T = taboo_occupation(K, pd, i, window=window)
        for j in range(3):
            fac_err = max(fac_err, np.abs(slab_masses(convolve(T[i, j], U[i, i]), t, 0.25)
                                          - U.slab(i, j, t, 0.25)).max())
    ratio = max(local_bound_check(U, pd.pi, h).max_ratio for h in (0.25, 1.0, 4.0))
    # Monte Carlo identities on a stochastic two-state kernel, 10^4 cycles
    P = np.array([[0.3, 0.7], [0.6, 0.4]])
    Km = SemiMarkovKernel.from_specs(P, [["exp(1)", "normal(1, 0.5)"], ["uniform(0, 2)", "exp(2)"]])
    pdm = perron_pair(P)
    mu = prob_drift(Km)
    g = lambda j, x: (j + 1) * np.cos(x)  # noqa: E731
    ce = cycle_estimators(first_cycles(Km, 0, 10_000, seed=2024), 0, g)
    occ_ok = all(ce.occupation[j].within(pdm.pi[j] / pdm.pi[0]) for j in range(2))
    func_ok = ce.functional.within(stationary_expectation(Km, pdm.pi, g, i=0))
    drift_ok = all(
        cycle_estimators(first_cycles(Km, j, 10_000, seed=77 + j), j)
        .drift.within(mu / pdm.pi[j]) for j in range(2))
    elapsed = time.perf_counter() - t0
    report(5, f"V-DUD^-1 {uv_err:.1e}, factorization {fac_err:.1e}, local ratio {ratio:.3f}, "
              f"{ce.n_cycles} cycles",
           [("V = D U D^-1", uv_err <= 1e-12), ("factorization", fac_err <= 1e-6),
            ("local bound", ratio <= 1 + 1e-9), ("1e4 cycles", ce.n_cycles == 10_000),
            ("occupation", occ_ok and func_ok), ("return drift", drift_ok)], elapsed)


def test_criterion_6_mre(report, exp2_window):
    t0 = time.perf_counter()
    Kp = SemiMarkovKernel.from_specs([[1.0]], "exp(1)", step=1e-3)
    pdp = perron_pair(Kp.weights)
    win = (-1.0, 20.0)
    Vp = renewal_measure(Kp, pdp, window=win)
    z = GridFunction.from_callable(exp_decay, 1, win, Kp.step)
    Z = solve_mre(Kp, pdp, Vp, z)
    closed = np.abs(Z.values[0, Z.cell_left >= 0] - 1).max()
    res = residual(Z, z, Kp).sup
    shift = max(abs(residual(Z.plus_multiple(c, pdp.v), z, Kp).sup - res) for c in (-1.0, 1.0, 10.0))

    K, pd, st, V, _ = exp2_window
    zb = GridFunction.from_callable(unit_box, 2, V.window, K.step)
    Zb = solve_mre(K, pd, V, zb)
    edge_rel = float(np.max(np.abs(right_edge_value(Zb) / asymptotic_limit(zb, pd, st) - 1)))
    res2 = residual(Zb, zb, K).sup
    shift2 = max(abs(residual(Zb.plus_multiple(c, pd.v), zb, K).sup - res2) for c in (-1.0, 1.0, 10.0))

    hv = homogeneous_probe(GridFunction.constant(2.5 * pd.v, V.window, K.step), K, pd, n_iter=1)
    rng = np.random.default_rng(99)
    cand = []
    for _ in range(50):
        c = rng.uniform(-2, 2, 2)
        while abs(c[0] / pd.v[0] - c[1] / pd.v[1]) < 0.05:
            c = rng.uniform(-2, 2, 2)
        amp, om, ph = rng.uniform(0, 1, 2), rng.uniform(0.2, 3, 2), rng.uniform(0, 2 * np.pi, 2)
        fn = (lambda i, t, c=c, amp=amp, om=om, ph=ph: c[i] + amp[i] * np.sin(om[i] * t + ph[i]))
        Zc = GridFunction.from_callable(fn, 2, V.window, K.step)
        cand.append(residual(Zc, None, K).sup)
    elapsed = time.perf_counter() - t0
    report(6, f"Z*=1 err {closed:.1e}, residuals {res:.1e}/{res2:.1e}, min non-harmonic "
              f"{min(cand):.2e}, right edge {edge_rel:.2e}",
           [("closed form 1e-5", closed <= 1e-5), ("residual 1e-6", max(res, res2) <= 1e-6),
            ("shift family", max(shift, shift2) <= 1e-9),
            ("multiple of v", hv.homogeneous_residual <= 1e-9),
            ("50 non-multiples > 1e-3", min(cand) > 1e-3), ("right edge 2%", edge_rel <= 0.02)],
           elapsed)


def test_criterion_7a_lindley(report):
    t0 = time.perf_counter()
    K = mm1_kernel()
    lam = find_tilt_root(K).lam
    rep = lindley_tail(K, np.linspace(0.5, 5.0, 10), 100_000, seed=1)
    elapsed = time.perf_counter() - t0
    report("7a", f"lambda={lam:.12f}, slope {rep.slope[0]:.4f}, prefactor {rep.prefactor[0]:.4f}",
           [("lambda 1e-9", abs(lam - 1) <= 1e-9), ("slope", abs(rep.slope[0] + 1) <= 0.05),
            ("prefactor", abs(rep.prefactor[0] - 0.5) <= 0.05), ("runtime < 120 s", elapsed < 120)],
           elapsed)


def test_criterion_7b_branching(report):
    t0 = time.perf_counter()
    checks, parts = [], []
    for name, M in (("single type", [[2.0]]), ("two types", [[0, 2], [2, 0]])):
        m = len(M)
        rep = malthusian(BranchingModel(M, ["exp(1)"] * m))
        rel = float(np.max(np.abs(rep.right_edge / rep.limit - 1)))
        checks += [(f"{name} alpha", abs(rep.alpha - 1) <= 1e-9), (f"{name} limit 3%", rel <= 0.03)]
        parts.append(f"{name}: alpha={rep.alpha:.12f}, edge rel {rel:.1e}")
    report("7b", "; ".join(parts), checks, time.perf_counter() - t0)


def test_criterion_7c_perpetuity(report):
    t0 = time.perf_counter()
    model = PerpetuityModel([0.5, 1.5], [[0.5, 0.5], [0.5, 0.5]])
    rep = perpetuity(model, 1_000_000, seed=2)
    elapsed = time.perf_counter() - t0
    report("7c", f"alpha={rep.alpha:.12f}, slope {rep.slope_plus:.4f}, KS p={rep.ks_pvalue:.3f}",
           [("alpha 1e-9", abs(rep.alpha - 1) <= 1e-9), ("slope", abs(rep.slope_plus + 1) <= 0.1),
            ("samplers agree at 1%", rep.ks_pvalue > 0.01)], elapsed)


def test_criterion_8_determinism(report, tmp_path):
    runs = [["renewal", "--config", str(CONFIGS / "two_state.json"), "--window", "-5,20"],
            ["simulate", "--config", str(CONFIGS / "two_state.json")],
            ["app", "lindley", "--config", str(CONFIGS / "mm1.json"), "--paths", "5000"],
            ["app", "perpetuity", "--config", str(CONFIGS / "perpetuity.json"), "--paths", "20000"]]
    checks = []
    n_files = 0
    for k, cmd in enumerate(runs):
        outs = []
        for rep in range(2):
            out = tmp_path / f"run{k}_{rep}"
            code = run([*cmd, "--seed", "13", "--out", str(out)])
            checks.append((f"{cmd[0]} exit", code == 0))
            outs.append(out)
        csvs = sorted(p.name for p in outs[0].glob("*.csv"))
        n_files += len(csvs)
        same = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in csvs)
        checks.append((" ".join(cmd[:2]), same and len(csvs) > 0))
    report(8, f"{n_files} CSV files byte-identical across repeated runs", checks)
