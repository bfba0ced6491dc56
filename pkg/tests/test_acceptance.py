"""Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below."""
import math

import numpy as np
import pytest

from vmkit.core import KineticState, PhaseSpaceGrid, growth_rate_fit, l2, loglog_slope, sample_profile
from vmkit.dispersion import (build_growing_mode, cutoff_wavenumber, count_unstable_roots, default_rect,
                              dispersion_value, unstable_roots)
from vmkit.equilibria import make_profile, marginalize, penrose_report
from vmkit.hierarchy import build_hierarchy, residual_scaling
from vmkit.limits import (difference_tracking, frame_equivalence, instability_experiment,
                          quasineutral_experiment, random_mean_zero, rescale_and_patch, seed_state,
                          shift_invariant)
from vmkit.solvers import evolve_linear_vp, evolve_nonlinear_vm, evolve_nonlinear_vp, vm_state

from conftest import K_REF, M_REF

# pinned tolerances
ROOT_RESIDUAL = 1e-10
CHARGE_TOL = 1e-6
CURRENT_TOL = 1e-10
LINEAR_RATE_REL = 0.02
RATE_SLACK = 0.05
SLOPE_MARGIN = 0.5
SLOPE_GAIN, SLOPE_GAIN_TOL = 1.0, 0.5
ESCAPE_SLOPE_REL = 0.15
FRAME_TOL = 1e-8
MASS_TOL = 1e-10
GAUSS_TOL = 1e-8
HALVING_BAND = (3.0, 5.0)

ESCAPE_EPS = [1e-1, 10**-1.5, 1e-2, 10**-2.5]
RESIDUAL_EPS = [0.08, 0.04, 0.02, 0.01]


@pytest.fixture(scope="module")
def rate_ref(root_ref):
    return root_ref.growth_rate


def test_criterion_01_penrose(record_line, bump2):
    maxw = marginalize(make_profile("maxwellian", {}, dv=1))
    ks = [2 * math.pi * j / M_REF for j in range(1, 9)] + [0.05, 1.5, 3.0]
    counts = [count_unstable_roots(maxw, k, default_rect(maxw)) for k in ks]
    rep_m = penrose_report(maxw)
    marg = marginalize(bump2)
    rep_b = penrose_report(marg)
    kc = cutoff_wavenumber(marg, 0.0)
    below = [k for k in (0.1, K_REF, 0.4, 0.5) if k < kc]
    found = []
    for k in below:
        roots = unstable_roots(marg, k)
        found.append((len(roots), max(abs(r.omega0.real) for r in roots),
                      max(abs(dispersion_value(marg, k, r.omega0)) for r in roots)))
    above = [len(unstable_roots(marg, k)) for k in (kc * 1.05, 0.8)]
    ok = (not rep_m.sharp_pass and all(c == 0 for c in counts) and rep_b.sharp_pass
          and all(n == 1 and re < 1e-8 and d < ROOT_RESIDUAL for n, re, d in found)
          and all(n == 0 for n in above))
    worst = max(d for _, _, d in found)
    record_line(1, ok, f"maxwellian counts {set(counts)}, bump roots/k {[n for n, _, _ in found]} "
                       f"below k_c={kc:.6f}, max |D|={worst:.1e}")
    assert ok


def test_criterion_02_eigen_consistency(record_line, mode16, mode32):
    worst_q, worst_j = 0.0, 0.0
    for m in (mode16, mode32):
        g = m.grid
        q = complex(np.sum(m.fhat_unit) * g.dvol)
        worst_q = max(worst_q, abs(q - 1.0))
        for s in (0.0, 3.0):
            f = m.g1(s)
            j1 = np.sum(f * g.v[None, :, None]) * g.dx * g.dvol
            j2 = np.sum(f * g.v[None, None, :]) * g.dx * g.dvol
            worst_j = max(worst_j, abs(j1), abs(j2))
    ok = worst_q < CHARGE_TOL and worst_j < CURRENT_TOL
    record_line(2, ok, f"|int fhat - 1|={worst_q:.1e}, |int int v g1|={worst_j:.1e}")
    assert ok


def _linear_rate(mode, profile, rate_ref, horizon=30.0, dt=0.05):
    tr = evolve_linear_vp(mode.g1(0.0), profile, mode.grid, dt=dt, horizon=horizon)
    sel = tr.times >= 1.0 / rate_ref
    return growth_rate_fit(tr.times[sel], tr["L2"][sel], window=1.0)


def test_criterion_03_linear_growth(record_line, bump2, root_ref, rate_ref):
    errs = []
    for Nx, Nv, dt in ((16, 32, 0.1), (16, 64, 0.05), (16, 128, 0.025)):
        g = PhaseSpaceGrid(M_REF, Nx, 2, Nv, bump2.vmax_decay)
        fit = _linear_rate(build_growing_mode(root_ref, bump2, g), bump2, rate_ref, dt=dt)
        errs.append(abs(fit.rate / rate_ref - 1.0))
    ok = errs[-1] < LINEAR_RATE_REL and errs[-1] <= errs[0]
    record_line(3, ok, "rate error under refinement " + ", ".join(f"{e:.1e}" for e in errs)
                + f" (Re lambda0={rate_ref:.6f})")
    assert ok


def test_criterion_04_semigroup_bound(record_line, bump1, rate_ref):
    g = PhaseSpaceGrid(M_REF, 32, 1, 128, bump1.vmax_decay)
    mu = sample_profile(bump1, g)[0]
    rates = []
    for seed in range(10):
        g0 = 1e-3 * random_mean_zero(g, mu, np.random.default_rng(seed))
        tr = evolve_linear_vp(g0, bump1, g, dt=0.05, horizon=40.0, diag_every=2)
        rates.append(growth_rate_fit(tr.times, tr["L2"], window=0.5).rate)
    ok = max(rates) <= rate_ref + RATE_SLACK
    record_line(4, ok, f"max tail rate {max(rates):.4f} <= {rate_ref + RATE_SLACK:.4f} over 10 seeds")
    assert ok


def test_criterion_05_residual_order(record_line, bump2, mode16):
    p = 2
    slopes = {}
    for N in (1, 2):
        sols = [build_hierarchy(mode16, bump2, p, N, e, 1.0, dt=0.005, probes=(0.5, 0.9))
                for e in RESIDUAL_EPS]
        slopes[N] = residual_scaling(sols).slope
    gain = slopes[2] - slopes[1]
    ok_a = all(slopes[N] >= N + p - SLOPE_MARGIN for N in (1, 2))
    ok_b = abs(gain - SLOPE_GAIN) <= SLOPE_GAIN_TOL
    record_line(5, ok_a and ok_b, f"slopes N=1 {slopes[1]:.3f}, N=2 {slopes[2]:.3f} "
                                  f"(need >= {1 + p - SLOPE_MARGIN}, {2 + p - SLOPE_MARGIN}); "
                                  f"N=2 gain {gain:.3f} (need 1+-0.5)")
    assert ok_a, "residual slope below N+p-0.5"
    assert ok_b, "N=2 does not gain one order over N=1"


def test_criterion_06_term_growth(record_line, bump2, mode16, rate_ref):
    sol = build_hierarchy(mode16, bump2, 2, 3, 0.01, 10.0, dt=0.02, transverse=0.5, diag_every=5)
    lines, ok = [], True
    for t in sol.terms:
        bound = (1 + (t.k - 1) / 2) * rate_ref + RATE_SLACK
        if t.rate is None:
            ok = False
            lines.append(f"f{t.k} not fitted")
            continue
        ok &= t.rate.rate <= bound
        lines.append(f"f{t.k} {t.rate.rate:.3f}<={bound:.3f}")
    record_line(6, ok, ", ".join(lines))
    assert ok


@pytest.fixture(scope="module")
def escape_report(bump2, mode32):
    return instability_experiment(mode32, bump2, 2, ESCAPE_EPS, dt=0.05)


def test_criterion_07_escape_law(record_line, escape_report):
    rep = escape_report
    escaped = all(r.escaped for r in rep.records)
    ok = escaped and rep.slope_error < ESCAPE_SLOPE_REL and all(rep.above_threshold.values())
    record_line(7, ok, f"slope {rep.slope:.3f} vs p/Re lambda0 {rep.predicted_slope:.3f} "
                       f"({100 * rep.slope_error:.1f}%), s_eps {np.round(rep.s_eps, 2).tolist()}, "
                       f"thresholds {rep.above_threshold}")
    assert ok


def test_criterion_08_bootstrap(record_line, bump2, root_ref):
    worst, ok = [], True
    for Nx, Nv in ((16, 64), (32, 64)):
        g = PhaseSpaceGrid(M_REF, Nx, 2, Nv, bump2.vmax_decay)
        rep = difference_tracking(build_growing_mode(root_ref, bump2, g), bump2, 2, 1, 1e-3, dt=0.05)
        w = rep.times <= rep.window_end
        worst.append(float(np.max(rep.diff[w] / rep.envelope[w])))
        ok &= rep.ok
    record_line(8, ok, f"max diff/envelope {worst[0]:.1e} (16x64), {worst[1]:.1e} (32x64) "
                       f"up to eps^p e^(lambda s) = 1/2")
    assert ok


def test_criterion_09_frames_and_quasineutral(record_line, bump2, mode32):
    g = mode32.grid
    eps = 1.0 / (2 * M_REF)
    st, _ = seed_state(mode32, bump2, eps, 1)
    mu = sample_profile(bump2, g)[0]
    st.f = st.f + 1e-3 * np.cos(K_REF * g.x)[:, None, None] * (g.vmesh()[..., 1] * mu)[None]
    fc = frame_equivalence(st, 2, 2.0, 0.05)
    patched = rescale_and_patch(st, "to-quasineutral", 2, eps)
    rep = quasineutral_experiment(mode32, bump2, 3, 1, 1, [1, 2, 4, 8])
    t = rep.t_eps
    coef, _, r2 = rep.t_fit
    pred = rep.p / mode32.rate
    ok = (fc.max_diff < FRAME_TOL and shift_invariant(patched, g.Nx) and rep.shift_invariant
          and all(c["holds"] for c in rep.certificate)
          and bool(np.all(np.diff(t) < 0)) and abs(coef / pred - 1) < ESCAPE_SLOPE_REL and r2 > 0.99
          and rep.eps_E_ok)
    record_line(9, ok, f"frame diff {fc.max_diff:.1e}, t_eps {np.round(t, 4).tolist()}, "
                       f"eps log(1/eps) coef {coef:.2f} vs {pred:.2f} (r2 {r2:.5f}), "
                       f"min eps||E|| {min(r['eps_L2_E'] for r in rep.rows):.3f} >= {rep.eps_E_threshold:.3f}")
    assert ok


def _halving(run, dts, grid):
    finals = [run(dt) for dt in dts]
    errs = [l2(a - b, grid) for a, b in zip(finals, finals[1:])]
    return [e0 / e1 for e0, e1 in zip(errs, errs[1:])]


def test_criterion_10_solver_hygiene(record_line, bump2, mode16, mode32):
    maxw = make_profile("maxwellian", {}, dv=1)
    g1 = PhaseSpaceGrid(M_REF, 32, 1, 128, maxw.vmax_decay)
    mu = sample_profile(maxw, g1)[0]
    f = mu[None] * (1 + 0.05 * np.cos(K_REF * g1.x))[:, None]
    vp = evolve_nonlinear_vp(KineticState(f, np.zeros(g1.Nx), g1), dt=0.05, horizon=50.0, diag_every=10)
    drift = [np.ptp(vp["mass"]) / M_REF]
    gauss = []
    # stable equilibrium for the long runs; the unstable seed is followed up to saturation
    maxw2 = make_profile("maxwellian", {}, dv=2)
    for Nx, Nv in ((16, 32), (32, 64)):
        g2 = PhaseSpaceGrid(M_REF, Nx, 2, Nv, maxw2.vmax_decay)
        mu2 = sample_profile(maxw2, g2)[0]
        st = vm_state(g2, mu2[None] * (1 + 0.05 * np.cos(K_REF * g2.x))[:, None, None], 0.2)
        st.E[1] = 1e-2 * np.cos(K_REF * g2.x)
        tr = evolve_nonlinear_vm(st, dt=0.05, horizon=50.0, diag_every=10)
        drift.append(np.ptp(tr["mass"]) / M_REF)
        gauss.append(tr["gauss"].max())
    for m in (mode16, mode32):
        st, _ = seed_state(m, bump2, 0.1, 2)
        st.E[1] = 1e-3 * np.cos(K_REF * m.grid.x)
        tr = evolve_nonlinear_vm(st, dt=0.05, horizon=25.0, diag_every=10)
        drift.append(np.ptp(tr["mass"]) / M_REF)
        gauss.append(tr["gauss"].max())
    st, _ = seed_state(mode16, bump2, 0.1, 2)
    st.E[1] = 1e-3 * np.cos(K_REF * mode16.grid.x)
    ratios = _halving(lambda dt: evolve_nonlinear_vm(st, dt=dt, horizon=5.0, diag_every=20).final.f,
                      (0.1, 0.05, 0.025), mode16.grid)
    ratios += _halving(lambda dt: evolve_nonlinear_vp(KineticState(f, np.zeros(g1.Nx), g1), dt=dt,
                                                      horizon=5.0).final.f, (0.1, 0.05, 0.025), g1)
    ok = (max(drift) < MASS_TOL and max(gauss) < GAUSS_TOL
          and all(HALVING_BAND[0] < r < HALVING_BAND[1] for r in ratios))
    record_line(10, ok, f"mass drift {max(drift):.1e}, Gauss {max(gauss):.1e}, "
                        f"dt-halving ratios {np.round(ratios, 2).tolist()}")
    assert ok


def test_slope_helper_sanity():
    e = np.array(RESIDUAL_EPS)
    assert loglog_slope(e, 3 * e**4)[0] == pytest.approx(4.0, abs=1e-12)
