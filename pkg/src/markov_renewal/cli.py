"""Command-line entry point.

Every subcommand reads a JSON model config (see :mod:`markov_renewal.config`),
writes CSV tables under ``--out`` and a ``summary.json`` keyed by analysis.
Exit status is 0 on success, 1 on invalid input and 2 on a numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .apps import BranchingModel, PerpetuityModel, lindley_tail, malthusian, perpetuity
from .config import ConfigError, ModelSpec, forcing_function, load_config
from .errors import MarkovRenewalError, NotSpreadOut, ValidationError
from .kernel import kernel_stats
from .mre import GridFunction, asymptotic_limit, dri_check, residual, right_edge_value, solve_mre
from .perron import harmonic_transform, is_primitive, perron_pair
from .renewal import (arithmetic_blackwell_check, blackwell_check, markov_renewal_measure,
                      renewal_measure, stone_density, uv_transform)
from .simulate import cycle_estimators, empirical_renewal, sample_paths, replicate_rng

SUBCOMMANDS = ("analyze", "renewal", "solve", "simulate", "app")
APPS = ("lindley", "branching", "perpetuity")


# --- output helpers ---------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return float(f"{x:.12g}") if math.isfinite(x) else None
    return x


def write_summary(out: Path, key: str, payload: dict) -> None:
    """Merge ``payload`` under ``key`` into ``out/summary.json``."""
    path = out / "summary.json"
    data = {}
    if path.exists():
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError:
            data = {}
    data[key] = _jsonable(payload)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# --- flag handling ----------------------------------------------------------------


def _window_arg(text: str) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A,B, got {text!r}")
    if not a < b:
        raise argparse.ArgumentTypeError(f"window needs A < B, got {text!r}")
    return a, b


def _positive(kind):
    def conv(text):
        try:
            x = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value {text!r}")
        if not x > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text!r}")
        return x
    return conv


def _nonneg_int(text):
    try:
        x = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}")
    if x < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {text!r}")
    return x


class _Parser(argparse.ArgumentParser):
    """Usage errors count as invalid input: exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, metavar="PATH", help="JSON model config")
    p.add_argument("--out", default="out", metavar="DIR", help="output directory (default: out)")
    p.add_argument("--seed", type=_nonneg_int, metavar="N", help="master seed (overrides config)")
    p.add_argument("--paths", type=_positive(int), metavar="N", help="number of simulated paths")
    p.add_argument("--window", type=_window_arg, metavar="A,B", help="grid window (overrides config)")
    p.add_argument("--step", type=_positive(float), metavar="D", help="grid step (overrides config)")
    p.add_argument("--tol", type=_positive(float), metavar="X",
                   help="quasi-stochasticity tolerance on |rho - 1|")


def build_parser() -> argparse.ArgumentParser:
    flags = "flags: --config PATH --out DIR --seed N --paths N --window A,B --step D --tol X"
    parser = _Parser(prog="markov-renewal",
                     description="Markov renewal analyses of semi-Markov kernels.",
                     epilog=flags)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(SUBCOMMANDS) + "}",
                                parser_class=_Parser)
    helps = {
        "analyze": "Perron data, harmonic transform, drift and lattice type",
        "renewal": "renewal measures V and U with limit-theorem diagnostics",
        "solve": "solve the Markov renewal equation and report its asymptotics",
        "simulate": "sample paths, cycle estimators and empirical renewal measures",
        "app": "application drivers: lindley, branching, perpetuity",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=helps[name], description=helps[name], epilog=flags)
        if name == "app":
            p.add_argument("app", choices=APPS, help="application to run")
        _common(p)
    return parser


def _apply_flags(cfg: ModelSpec, args) -> ModelSpec:
    if args.window is not None:
        cfg.window = args.window
    if args.step is not None:
        cfg.step = args.step
    if args.seed is not None:
        cfg.seed = args.seed
    if args.tol is not None:
        cfg.tolerances["perron"] = args.tol
    return cfg


# --- subcommands ------------------------------------------------------------------


def _perron(cfg: ModelSpec, K):
    tol = float(cfg.tolerances.get("perron", 1e-10))
    return perron_pair(K.weights, tol=tol), tol


def _lattice_dict(lat) -> dict:
    return {"arithmetic": lat.arithmetic, "d": lat.d,
            "gamma": None if lat.gamma is None else lat.gamma, "spread_out": lat.spread_out,
            "label": str(lat)}


def cmd_analyze(cfg: ModelSpec, args, out: Path) -> dict:
    K = cfg.kernel()
    pd, tol = _perron(cfg, K)
    P, _ = harmonic_transform(K.weights, pd, tol)
    st = kernel_stats(K, pd, check=False)
    write_csv(out / "perron.csv", ["state", "label", "u", "v", "pi"],
              [(k + 1, cfg.states[k], pd.u[k], pd.v[k], pd.pi[k]) for k in range(K.m)])
    write_csv(out / "harmonic.csv", ["i", "j", "p_ij", "mean_ij"],
              [(i + 1, j + 1, P[i, j], st.mean_matrix[i, j]) for i in range(K.m) for j in range(K.m)])
    return {"rho": pd.rho, "u": pd.u, "v": pd.v, "pi": pd.pi, "P": P, "tol": tol,
            "primitive": is_primitive(K.weights), "drift": st.mu,
            "mean_matrix": st.mean_matrix, "lattice": _lattice_dict(st.lattice)}


def cmd_renewal(cfg: ModelSpec, args, out: Path) -> dict:
    K = cfg.kernel()
    pd, tol = _perron(cfg, K)
    st = kernel_stats(K, pd)
    eps = float(cfg.tolerances.get("truncation", 1e-8))
    U = markov_renewal_measure(K, pd, cfg.window, eps)
    V = uv_transform(U, pd, "U->V")
    V.to_csv(out / "V.csv")
    U.to_csv(out / "U.csv")
    h = float(cfg.section("renewal").get("h", 1.0))
    a, b = cfg.window
    t = np.arange(a, b - h + 1e-9, h)
    write_csv(out / "slabs.csv", ["i", "j", "t", "h", "V_slab", "U_slab"],
              [(i + 1, j + 1, tk, h, V.slab(i, j, tk, h), U.slab(i, j, tk, h))
               for i in range(K.m) for j in range(K.m) for tk in t])
    res = {"n_terms": U.report.n_terms, "truncation_residual": U.report.residual,
           "drift": st.mu, "lattice": _lattice_dict(st.lattice), "window": cfg.window,
           "step": cfg.step}
    lat = st.lattice
    rows = (arithmetic_blackwell_check(V, pd, st, lat) if lat.arithmetic
            else blackwell_check(V, pd, st, h=h))
    write_csv(out / "blackwell.csv", ["i", "j", "increment", "limit", "abs_error", "left_increment"],
              [(r.i + 1, r.j + 1, r.increment, r.limit, r.abs_error, r.left_increment) for r in rows])
    res["blackwell_max_rel_error"] = max(r.abs_error / r.limit for r in rows)
    try:
        sd = stone_density(V, pd, st, K)
    except NotSpreadOut:
        res["stone"] = None
    else:
        write_csv(out / "stone.csv", ["i", "j", "right_estimate", "left_estimate", "limit", "rel_error"],
                  [(i + 1, j + 1, sd.right_estimate[i, j], sd.left_estimate[i, j], sd.limit[i, j],
                    sd.rel_error[i, j]) for i in range(K.m) for j in range(K.m)])
        res["stone"] = {"max_rel_error": float(sd.rel_error.max()), "nonnegative": sd.nonnegative}
    return res


def cmd_solve(cfg: ModelSpec, args, out: Path) -> dict:
    K = cfg.kernel()
    pd, _ = _perron(cfg, K)
    st = kernel_stats(K, pd)
    zf = forcing_function(cfg)
    z = GridFunction.from_callable(zf, K.m, cfg.window, cfg.step)
    eps = float(cfg.tolerances.get("truncation", 1e-8))
    V = renewal_measure(K, pd, st, cfg.window, eps)
    Z = solve_mre(K, pd, V, z)
    lim = asymptotic_limit(z, pd, st)
    edge = right_edge_value(Z)
    res = residual(Z, z, K)
    dri = dri_check(z, pd.u)
    Z.to_csv(out / "Z.csv")
    write_csv(out / "limits.csv", ["state", "limit", "right_edge", "residual"],
              [(k + 1, lim[k], edge[k], res.per_state[k]) for k in range(K.m)])
    return {"limit": lim, "right_edge": edge, "residual": res.sup, "interior": res.interior,
            "flags": Z.flags, "dri": {"dri": dri.dri, "window_only": dri.window_only,
                                      "spread_out_ok": dri.spread_out_ok}}


def cmd_simulate(cfg: ModelSpec, args, out: Path) -> dict:
    K = cfg.kernel()
    pd, _ = _perron(cfg, K)
    sec = cfg.section("simulate")
    H = K.harmonic(pd)
    n_paths = args.paths or int(sec.get("paths", 200))
    n_steps = int(sec.get("steps", 2000))
    start = int(sec.get("start", 1)) - 1
    if not 0 <= start < K.m:
        cfg.fail(f"simulate.start must be in 1..{K.m}", '"start"')
    batch = sample_paths(H, start, n_steps, n_paths, replicate_rng(cfg.seed, 0))
    batch.path(0, cfg.seed).to_csv(out / "path_0.csv")
    paths = [batch.path(r) for r in range(n_paths)]
    ce = cycle_estimators(paths, start)
    mu = kernel_stats(K, pd, check=False).mu
    targets = pd.pi / pd.pi[start]
    rows = [("drift", start + 1, ce.drift.value, ce.drift.se, mu / pd.pi[start])]
    rows += [("occupation", j + 1, e.value, e.se, targets[j]) for j, e in enumerate(ce.occupation)]
    write_csv(out / "cycles.csv", ["quantity", "state", "estimate", "se", "target"], rows)
    emp = empirical_renewal(batch, start, cfg.window, cfg.step)
    emp.measure.to_csv(out / "empirical_U.csv")
    return {"paths": n_paths, "steps": n_steps, "start": start + 1, "n_cycles": ce.n_cycles,
            "drift": {"estimate": ce.drift.value, "se": ce.drift.se, "target": mu / pd.pi[start]},
            "occupation": {"estimate": [e.value for e in ce.occupation],
                           "se": [e.se for e in ce.occupation], "target": targets}}


def app_lindley(cfg: ModelSpec, args, out: Path) -> dict:
    K = cfg.kernel()
    sec = cfg.section("lindley")
    t = np.asarray(sec.get("t", list(np.linspace(0.0, 5.0, 11))), dtype=float)
    n_paths = args.paths or int(sec.get("paths", 10000))
    rep = lindley_tail(K, t, n_paths, cfg.seed)
    write_csv(out / "lindley.csv", ["state", "t", "tail", "se", "compensated"],
              [(i + 1, tk, rep.tail[i, k], rep.tail_se[i, k], rep.compensated[i, k])
               for i in range(K.m) for k, tk in enumerate(t)])
    return {"lambda": rep.lam, "slope": rep.slope, "prefactor": rep.prefactor, "paths": n_paths,
            "ladder_q": rep.ladder_q,
            "row_identity": [{"estimate": e.value, "se": e.se} for e in rep.ladder_row_identity]}


def app_branching(cfg: ModelSpec, args, out: Path) -> dict:
    sec = cfg.section("branching")
    if "M" not in sec or "lifetimes" not in sec:
        cfg.fail("branching section needs 'M' and 'lifetimes'", '"branching"')
    try:
        model = BranchingModel(sec["M"], sec["lifetimes"], cfg.step)
    except ValidationError as exc:
        cfg.fail(str(exc), '"branching"')
    window = tuple(sec.get("window", (min(cfg.window[0], -2.0), cfg.window[1])))
    rep = malthusian(model, window=window, strict=bool(sec.get("strict", False)))
    rep.Z.to_csv(out / "branching_Z.csv")
    m = model.M.shape[0]
    write_csv(out / "branching.csv", ["type", "limit", "right_edge"],
              [(k + 1, rep.limit[k], rep.right_edge[k]) for k in range(m)])
    return {"alpha": rep.alpha, "primitive": rep.primitive, "limit": rep.limit,
            "right_edge": rep.right_edge, "residual": rep.residual}


def app_perpetuity(cfg: ModelSpec, args, out: Path) -> dict:
    sec = cfg.section("perpetuity")
    if "values" not in sec or "p" not in sec:
        cfg.fail("perpetuity section needs 'values' and 'p'", '"perpetuity"')
    try:
        model = PerpetuityModel(sec["values"], sec["p"], sec.get("B", "point(1)"))
    except ValidationError as exc:
        cfg.fail(str(exc), '"perpetuity"')
    n = args.paths or int(sec.get("samples", 100000))
    rep = perpetuity(model, n, cfg.seed)
    write_csv(out / "perpetuity_tail.csv", ["t", "tail_plus"], zip(rep.tail_t, rep.tail_plus))
    write_csv(out / "perpetuity_smoothed.csv", ["t", "state", "Z_plus", "Z_minus"],
              [(t, s + 1, rep.smoothed_plus[s, k], rep.smoothed_minus[s, k])
               for k, t in enumerate(rep.smoothed_t) for s in range(rep.smoothed_plus.shape[0])])
    return {"alpha": rep.alpha, "rho": rep.rho, "conditions": rep.conditions,
            "slope_plus": rep.slope_plus, "slope_minus": rep.slope_minus,
            "ks_pvalue": rep.ks_pvalue, "samples": n}


COMMANDS = {"analyze": cmd_analyze, "renewal": cmd_renewal, "solve": cmd_solve,
            "simulate": cmd_simulate}
APP_COMMANDS = {"lindley": app_lindley, "branching": app_branching, "perpetuity": app_perpetuity}


def run(argv=None) -> int:
    """Parse ``argv``, run one analysis and return the exit status."""
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # "--window -5,20" would otherwise read the value as an option
    for k in range(len(argv) - 1):
        if argv[k] == "--window" and argv[k + 1].startswith("-"):
            argv[k:k + 2] = [f"--window={argv[k + 1]}", ""]
    argv = [a for a in argv if a != ""]
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out = Path(args.out)
    try:
        cfg = _apply_flags(load_config(args.config), args)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "app":
            key = f"app_{args.app}"
            payload = APP_COMMANDS[args.app](cfg, args, out)
        else:
            key = args.command
            payload = COMMANDS[args.command](cfg, args, out)
        write_summary(out, key, payload)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"error: {args.config}:1: {exc}", file=sys.stderr)
        return 1
    except MarkovRenewalError as exc:
        print(f"error [{exc.module}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
