"""Command-line front end: ``vmkit <subcommand> --config run.json``."""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import config as C
from .core import KineticState, PhaseSpaceGrid, l2, loglog_slope, sample_profile, write_state
from .dispersion import (BoundaryTooClose, RootNotFound, _safe_count, build_growing_mode,
                         cutoff_wavenumber, default_rect, minimal_unstable_box, unstable_roots)
from .equilibria import make_profile, marginalize, profile_report
from .hierarchy import LinkDivergence, build_hierarchy, residual
from .limits import (SUMMARY_COLUMNS, classical_limit_experiment, frame_equivalence,
                     instability_experiment, norm_identities, quasineutral_experiment,
                     random_mean_zero, rescale_and_patch, seed_state, shift_invariant)
from .solvers import NumericalInstability, evolve_nonlinear_vm, evolve_nonlinear_vp, vm_state

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_NOT_FOUND = 0, 2, 3, 4

TRAJ_COLUMNS = ("s", "mass", "L2", "Hneg", "rho_minus_1", "j", "E", "B", "gauss", "energy")
ROOT_COLUMNS = ("M", "k", "Re_omega", "Im_omega", "Re_lambda", "Im_lambda", "residual")


class NotFound(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# output

def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def _cell(v):
    v = _plain(v)
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


class Writer:
    def __init__(self, out, cfg, command):
        self.out, self.cfg, self.command = out, cfg, command
        os.makedirs(out, exist_ok=True)
        self.prefix = cfg["output"]["prefix"]
        self.files = []

    def path(self, suffix):
        return os.path.join(self.out, f"{self.prefix}{self.command}{suffix}")

    def json(self, result, suffix=".json"):
        body = {"schema_version": C.SCHEMA_VERSION, "command": self.command,
                "config": _plain(self.cfg), "result": _plain(result)}
        p = self.path(suffix)
        with open(p, "w") as fh:
            fh.write(json.dumps(body, sort_keys=True, indent=2) + "\n")
        self.files.append(p)
        return p

    def csv(self, columns, rows, suffix=".csv"):
        p = self.path(suffix)
        with open(p, "w", newline="") as fh:
            fh.write(f"# schema_version={C.SCHEMA_VERSION}\n")
            fh.write("# config=" + json.dumps(_plain(self.cfg), sort_keys=True, separators=(",", ":")) + "\n")
            w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_cell(r.get(c)) for c in columns])
        self.files.append(p)
        return p


# ---------------------------------------------------------------------------
# shared setup

def _profile(cfg):
    pr = cfg["profile"]
    return make_profile(pr["kind"], pr["params"], pr["dv"], pr["table"])


def _grid(cfg, profile):
    g = cfg["grid"]
    return PhaseSpaceGrid(g["M"], g["Nx"], g["dv"], g["Nv"], g["vmax"] or profile.vmax_decay)


def _root(cfg, profile):
    marg = marginalize(profile, cfg["profile"]["direction"])
    k = 2 * math.pi * cfg["experiment"]["harmonic"] / cfg["grid"]["M"]
    roots = unstable_roots(marg, k)
    if not roots:
        raise NotFound(f"no unstable root at k = {k:.6g}")
    return max(roots, key=lambda r: (r.growth_rate, -abs(r.omega0.real)))


def _mode(cfg, profile, grid=None):
    grid = _grid(cfg, profile) if grid is None else grid
    ex = cfg["experiment"]
    return build_growing_mode(_root(cfg, profile), profile, grid, norm=(ex["n"], ex["m"]))


def _traj_rows(tr):
    rows = []
    for i, s in enumerate(tr.times):
        r = {"s": float(s)}
        for k, v in tr.diagnostics.items():
            r["rho_minus_1" if k == "rho" else k] = float(v[i])
        rows.append(r)
    return rows


def _initial(cfg, profile, grid):
    ex = cfg["experiment"]
    mu = sample_profile(profile, grid)[0]
    if ex["init"] == "random":
        g0 = random_mean_zero(grid, mu, np.random.default_rng(ex["seed"]))
    else:
        m = _mode(cfg, profile, grid)
        g0 = m.g1(0.0)
        g0 = g0 / l2(g0, grid)
    return mu, g0


# ---------------------------------------------------------------------------
# subcommands

def cmd_penrose(cfg, w, jobs):
    profile = _profile(cfg)
    rep = profile_report(profile, cfg["profile"]["direction"])
    marg = marginalize(profile, cfg["profile"]["direction"])
    M = cfg["grid"]["M"]
    wind = []
    for j in range(1, 9):
        k = 2 * math.pi * j / M
        n, _ = _safe_count(marg, k, default_rect(marg))
        wind.append({"harmonic": j, "k": k, "count": n})
    sb = rep.candidates[0].sbar if rep.candidates else 0.0
    w.json({"sharp_pass": rep.sharp_pass, "classical_pass": rep.classical_pass,
            "delta_condition_sup": rep.delta_condition_sup,
            "candidates": [{"sbar": c.sbar, "integral": c.integral, "flat": c.flat,
                            "symmetric": c.symmetric} for c in rep.candidates],
            "k_cutoff": cutoff_wavenumber(marg, sb) if rep.sharp_pass else None,
            "winding": wind})
    return EXIT_OK


def cmd_dispersion(cfg, w, jobs):
    profile = _profile(cfg)
    marg = marginalize(profile, cfg["profile"]["direction"])
    M = cfg["grid"]["M"]
    kc = cutoff_wavenumber(marg)
    kcap = 4.0 * (kc or 1.0)
    rows = []
    h = 1
    while 2 * math.pi * h / M <= kcap:
        for r in unstable_roots(marg, 2 * math.pi * h / M):
            rows.append(r.row(M))
        h += 1
    rows.sort(key=lambda r: (r["k"], -r["Im_omega"], r["Re_omega"]))
    w.csv(ROOT_COLUMNS, rows)
    result = {"k_cutoff": kc, "n_roots": len(rows)}
    if cfg["experiment"]["M_grid"]:
        scan = minimal_unstable_box(profile, cfg["profile"]["direction"], cfg["experiment"]["M_grid"])
        result["M0"] = scan.M0
        result["fastest"] = scan.best.row(scan.M0) if scan.best else None
        result["ties"] = scan.ties
    w.json(result)
    return EXIT_OK


def cmd_mode(cfg, w, jobs):
    profile = _profile(cfg)
    grid = _grid(cfg, profile)
    m = _mode(cfg, profile, grid)
    fu = m.fhat_unit
    charge = complex(np.sum(fu) * grid.dvol)
    g1 = m.g1(0.0)
    vcur = [float(np.sum(g1 * (grid.vmesh()[..., i] if grid.dv == 2 else grid.v[None, :]))
                  * grid.dx * grid.dvol) for i in range(grid.dv)]
    eps = cfg["experiment"]["eps"][0]
    st, cert = seed_state(m, profile, eps, cfg["experiment"]["p"]) if grid.dv == 2 else (None, None)
    if st is not None:
        write_state(w.path(".vmkt"), st)
        w.files.append(w.path(".vmkt"))
    w.json({"root": m.root.row(grid.M), "omega_grid": m.omega_grid, "lambda": m.lam,
            "rate": m.rate, "charge": charge, "mean_current": vcur, "scale": m.scale,
            "certificate": None if cert is None else
            {"hnm": cert.hnm, "bound": cert.bound, "min_ratio": cert.min_ratio}})
    return EXIT_OK


def cmd_simulate_vp(cfg, w, jobs):
    profile = _profile(cfg)
    grid = _grid(cfg, profile)
    mu, g0 = _initial(cfg, profile, grid)
    f0 = mu[None] + cfg["experiment"]["amplitude"] * g0
    sc = cfg["scheme"]
    st = KineticState(f0, None, grid) if grid.dv == 1 else vm_state(grid, f0, 1.0)
    st.eps = 0.0
    tr = evolve_nonlinear_vp(st, sc["dt"], sc["horizon"], profile, s_prime=cfg["experiment"]["s_prime"])
    w.csv(TRAJ_COLUMNS, _traj_rows(tr))
    return EXIT_OK


def cmd_simulate_vm(cfg, w, jobs):
    profile = _profile(cfg)
    grid = _grid(cfg, profile)
    mu, g0 = _initial(cfg, profile, grid)
    eps = cfg["experiment"]["eps"][0]
    st = vm_state(grid, mu[None] + cfg["experiment"]["amplitude"] * g0, eps)
    sc = cfg["scheme"]
    tr = evolve_nonlinear_vm(st, eps, sc["dt"], sc["horizon"], profile, s_prime=cfg["experiment"]["s_prime"])
    w.csv(TRAJ_COLUMNS, _traj_rows(tr))
    write_state(w.path(".vmkt"), tr.final)
    w.files.append(w.path(".vmkt"))
    return EXIT_OK


def _hier(cfg, mode, profile, N, eps):
    sc, ex = cfg["scheme"], cfg["experiment"]
    return build_hierarchy(mode, profile, ex["p"], N, eps, sc["horizon"], sc["dt"], ex["transverse"],
                           probes=tuple(ex["probes"]))


def cmd_hierarchy(cfg, w, jobs):
    profile = _profile(cfg)
    mode = _mode(cfg, profile)
    ex = cfg["experiment"]
    sol = _hier(cfg, mode, profile, ex["N"], ex["eps"][0])
    lam = mode.rate
    rows = []
    for t in sol.terms:
        rows.append({"k": t.k, "rate": None if t.rate is None else t.rate.rate,
                     "bound": (1 + (t.k - 1) / ex["p"]) * lam,
                     "structurally_zero": int(t.structurally_zero), "norm_final": float(t.norm_f[-1])})
    w.csv(("k", "rate", "bound", "structurally_zero", "norm_final"), rows)
    w.json({"rate": lam, "residual": {str(s): residual(sol, s) for s in sol.probes},
            "link_iterations": sol.link_iterations, "link_contraction": sol.link_contraction,
            "mean_A_max": sol.mean_A_max, "structurally_zero": sol.meta["structurally_zero"]})
    return EXIT_OK


def cmd_residual_scan(cfg, w, jobs, N_flag=None):
    profile = _profile(cfg)
    mode = _mode(cfg, profile)
    ex = cfg["experiment"]
    Ns = [N_flag] if N_flag else [1, 2]
    rows, slopes = [], {}
    for N in Ns:
        vals = []
        for e in ex["eps"]:
            sol = _hier(cfg, mode, profile, N, e)
            r = max(residual(sol, s) for s in sol.probes)
            vals.append(r)
            rows.append({"N": N, "eps": e, "residual": r})
        if len(vals) >= 2:
            sl, r2 = loglog_slope(ex["eps"], vals)
            slopes[str(N)] = {"slope": sl, "r2": r2, "target": N + ex["p"] - 0.5}
    w.csv(("N", "eps", "residual"), rows)
    w.json({"slopes": slopes})
    return EXIT_OK


def cmd_classical_limit(cfg, w, jobs):
    profile = _profile(cfg)
    grid = _grid(cfg, profile)
    mu, g0 = _initial(cfg, profile, grid)
    ex, sc = cfg["experiment"], cfg["scheme"]
    tab = classical_limit_experiment(profile, grid, g0, ex["eps"], sc["horizon"], sc["dt"], ex["amplitude"])
    w.csv(("eps", "error"), [{"eps": float(e), "error": float(x)} for e, x in zip(tab.eps, tab.errors)])
    w.json({"order": tab.order, "r2": tab.r2, "monotone": tab.monotone, "S": tab.S, "seed_norm": tab.seed})
    return EXIT_OK


def _summary(rows):
    return [{k: r[k] for k in SUMMARY_COLUMNS} for r in rows]


def cmd_instability_scan(cfg, w, jobs):
    profile = _profile(cfg)
    mode = _mode(cfg, profile)
    ex, sc = cfg["experiment"], cfg["scheme"]
    rep = instability_experiment(mode, profile, ex["p"], ex["eps"], sc["dt"], ex["delta_frac"],
                                 s_prime=ex["s_prime"], jobs=jobs)
    w.csv(SUMMARY_COLUMNS, _summary(rep.table()))
    w.json({"rate": rep.rate, "slope": rep.slope, "predicted_slope": rep.predicted_slope,
            "slope_error": rep.slope_error, "delta0": rep.delta0, "delta0_prime": rep.delta0_prime,
            "monotone": rep.monotone, "above_threshold": rep.above_threshold,
            "escaped": [r.escaped for r in rep.records],
            "certificates": [{"eps": r.certificate.eps, "hnm": r.certificate.hnm,
                              "bound": r.certificate.bound, "min_ratio": r.certificate.min_ratio}
                             for r in rep.records]})
    return EXIT_OK if all(r.escaped for r in rep.records) else EXIT_NOT_FOUND


def cmd_rescale_verify(cfg, w, jobs):
    profile = _profile(cfg)
    grid = _grid(cfg, profile)
    if grid.dv != 2:
        raise C.ConfigError("grid.dv", "rescale-verify needs dv = 2")
    mode = _mode(cfg, profile, grid)
    ex, sc = cfg["experiment"], cfg["scheme"]
    copies = ex["copies"]
    eps = 1.0 / (copies * grid.M)
    st, _ = seed_state(mode, profile, eps, ex["p"])
    fc = frame_equivalence(st, copies, sc["horizon"], sc["dt"])
    q = rescale_and_patch(st, "to-quasineutral", copies, eps)
    back = rescale_and_patch(q, "to-classical", copies, eps)
    mu_c = sample_profile(profile, grid)[0]
    mu_q = sample_profile(profile, q.grid)[0]
    ids = norm_identities(st, q, mu_c, mu_q)
    w.json({"eps": eps, "copies": copies, "frame_max_diff": fc.max_diff,
            "frame_diffs": {"f": fc.max_diff_f, "E": fc.max_diff_E, "B": fc.max_diff_B},
            "round_trip_exact": bool(np.array_equal(back.f, st.f)),
            "round_trip_E": float(np.max(np.abs(np.asarray(back.E) - np.asarray(st.E)))),
            "shift_invariant": shift_invariant(q, grid.Nx),
            "norm_identities": [{"name": i.name, "lhs": i.lhs, "rhs": i.rhs, "factor": i.factor,
                                 "rel_error": i.rel_error} for i in ids],
            "conventions": {"squared_norm_factor": 1.0 / grid.M, "norm_factor": grid.M ** -0.5,
                            "three_d_squared_norm_factor": grid.M ** -3.0}})
    return EXIT_OK


def cmd_quasineutral_scan(cfg, w, jobs):
    profile = _profile(cfg)
    mode = _mode(cfg, profile)
    ex, sc = cfg["experiment"], cfg["scheme"]
    rep = quasineutral_experiment(mode, profile, ex["p"], ex["s"], ex["N"], ex["k_list"], sc["dt"],
                                  ex["delta_frac"], ex["s_prime"], jobs)
    w.csv(SUMMARY_COLUMNS, _summary(rep.rows))
    w.json({"M": rep.M, "ks": rep.ks, "eps": rep.eps, "certificate": rep.certificate,
            "t_fit": {"coef_eps_log": rep.t_fit[0], "coef_eps": rep.t_fit[1], "r2": rep.t_fit[2]},
            "eps_E_threshold": rep.eps_E_threshold, "eps_E_ok": rep.eps_E_ok,
            "shift_invariant": rep.shift_invariant, "classical_slope": rep.classical.slope,
            "predicted_slope": rep.classical.predicted_slope,
            "norm_identities": [[{"name": i.name, "rel_error": i.rel_error} for i in c]
                                for c in rep.norm_checks]})
    return EXIT_OK


COMMANDS = {
    "penrose": cmd_penrose, "dispersion": cmd_dispersion, "mode": cmd_mode,
    "simulate-vp": cmd_simulate_vp, "simulate-vm": cmd_simulate_vm, "hierarchy": cmd_hierarchy,
    "residual-scan": cmd_residual_scan, "classical-limit": cmd_classical_limit,
    "instability-scan": cmd_instability_scan, "rescale-verify": cmd_rescale_verify,
    "quasineutral-scan": cmd_quasineutral_scan,
}


# ---------------------------------------------------------------------------

def _eps_list(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty eps list")
    return vals


def build_parser():
    ap = argparse.ArgumentParser(prog="vmkit", description="Relativistic VM instability toolkit.")
    ap.add_argument("subcommand", choices=C.SUBCOMMANDS)
    ap.add_argument("--config", required=False, default=None, help="JSON run configuration")
    ap.add_argument("--eps", type=_eps_list, default=None, help="comma-separated eps values")
    ap.add_argument("--p", type=int, default=None)
    ap.add_argument("--N", type=int, default=None)
    ap.add_argument("--out", default=None, help="output directory (default $VMKIT_OUT)")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--seed", type=int, default=None)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    over = {"experiment": {}}
    if args.eps is not None:
        over["experiment"]["eps"] = args.eps
    if args.p is not None:
        over["experiment"]["p"] = args.p
    if args.N is not None:
        over["experiment"]["N"] = args.N
    if args.seed is not None:
        over["experiment"]["seed"] = args.seed
    try:
        if args.jobs < 1:
            raise C.ConfigError("--jobs", "must be at least 1")
        cfg = C.parse_config(args.config, over, args.subcommand)
        out = args.out or os.environ.get("VMKIT_OUT") or cfg["output"]["dir"] or "vmkit_out"
        w = Writer(out, cfg, args.subcommand)
        with open(w.path(".config.json"), "w") as fh:
            fh.write(C.serialize(cfg))
        fn = COMMANDS[args.subcommand]
        if args.subcommand == "residual-scan":
            code = fn(cfg, w, args.jobs, args.N)
        else:
            code = fn(cfg, w, args.jobs)
    except C.ConfigError as e:
        print(f"vmkit: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalInstability, LinkDivergence, BoundaryTooClose, FloatingPointError) as e:
        print(f"vmkit: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (RootNotFound, NotFound) as e:
        print(f"vmkit: not found: {e}", file=sys.stderr)
        return EXIT_NOT_FOUND
    except ValueError as e:
        print(f"vmkit: invalid input: {e}", file=sys.stderr)
        return EXIT_CONFIG
    for p in w.files:
        print(p)
    return code


if __name__ == "__main__":
    sys.exit(main())
