import math

import numpy as np
import pytest

from vmkit.core import KineticState, PhaseSpaceGrid, l2, mean_zero_check, sample_profile
from vmkit.equilibria import make_profile
from vmkit.limits import seed_state
from vmkit.solvers import (LinearVPStepper, NumericalInstability, VMFrame, evolve_linear_vp,
                           evolve_nonlinear_vm, evolve_nonlinear_vp, vm_state)

from conftest import K_REF, M_REF


@pytest.fixture(scope="module")
def maxw1():
    return make_profile("maxwellian", {}, dv=1)


@pytest.fixture(scope="module")
def maxw2():
    return make_profile("maxwellian", {}, dv=2)


def _grid1(profile, Nx=32, Nv=128):
    return PhaseSpaceGrid(M_REF, Nx, 1, Nv, profile.vmax_decay)


def test_free_transport_is_exact(bump1):
    g = _grid1(bump1)
    mu = sample_profile(bump1, g)[0]
    g0 = np.cos(K_REF * g.x)[:, None] * mu[None]
    tr = evolve_linear_vp(g0, bump1, g, dt=0.05, horizon=3.0, field=False)
    exact = np.cos(K_REF * (g.x[:, None] - g.v[None] * 3.0)) * mu[None]
    assert np.max(np.abs(tr.final.f - exact)) < 1e-10


def test_transport_reversible(bump1):
    g = _grid1(bump1)
    mu = sample_profile(bump1, g)[0]
    rng = np.random.default_rng(3)
    # random data without the x-Nyquist mode, which a real shift cannot carry
    gh = np.fft.rfft(rng.standard_normal(g.shape), axis=0)
    gh[-1] = 0.0
    g0 = np.fft.irfft(gh, g.Nx, axis=0) * mu[None]
    fwd = LinearVPStepper(g, np.zeros(g.Nv), 0.05, field=False)
    back = LinearVPStepper(g, np.zeros(g.Nv), -0.05, field=False)
    out = g0
    for _ in range(20):
        out = fwd.step(out)
    for _ in range(20):
        out = back.step(out)
    assert np.max(np.abs(out - g0)) < 1e-12 * np.max(np.abs(g0))


def test_linear_vp_keeps_mean_zero(bump1):
    g = _grid1(bump1, 16, 64)
    mu = sample_profile(bump1, g)[0]
    g0 = 1e-3 * np.sin(2 * K_REF * g.x)[:, None] * mu[None]
    tr = evolve_linear_vp(g0, bump1, g, dt=0.05, horizon=5.0)
    assert mean_zero_check(tr.final.f, g)


@pytest.mark.parametrize("dt, horizon", [(0.0, 1.0), (-0.1, 1.0), (50.0, 100.0), (0.05, 1.01)])
def test_bad_time_step(bump1, dt, horizon):
    g = _grid1(bump1, 16, 64)
    with pytest.raises(ValueError):
        evolve_linear_vp(np.zeros(g.shape), bump1, g, dt=dt, horizon=horizon)


def test_equilibrium_is_stationary(maxw1):
    g = _grid1(maxw1)
    mu = sample_profile(maxw1, g)[0]
    f = np.repeat(mu[None], g.Nx, axis=0)
    tr = evolve_nonlinear_vp(KineticState(f, np.zeros(g.Nx), g), dt=0.05, horizon=5.0)
    assert np.max(np.abs(tr.final.f - f)) < 1e-12


def test_vp_mass_and_energy(maxw1):
    g = _grid1(maxw1)
    mu = sample_profile(maxw1, g)[0]
    f = mu[None] * (1 + 0.05 * np.cos(K_REF * g.x))[:, None]
    tr = evolve_nonlinear_vp(KineticState(f, np.zeros(g.Nx), g), dt=0.05, horizon=50.0,
                             mu=maxw1, diag_every=10)
    assert np.ptp(tr["mass"]) / M_REF < 1e-10
    assert np.ptp(tr["energy"]) / tr["energy"][0] < 1e-4


def test_vp_rejects_unnormalized(maxw1):
    g = _grid1(maxw1, 16, 64)
    mu = sample_profile(maxw1, g)[0]
    f = 2.0 * np.repeat(mu[None], g.Nx, axis=0)
    with pytest.raises(ValueError, match="mass"):
        evolve_nonlinear_vp(KineticState(f, np.zeros(g.Nx), g), dt=0.05, horizon=1.0)


def test_negativity_guard(maxw1):
    g = _grid1(maxw1, 16, 64)
    mu = sample_profile(maxw1, g)[0]
    f = mu[None] * (1 + 0.9 * np.cos(K_REF * g.x))[:, None]
    f[0, g.Nv // 2] = -f.max()
    f *= M_REF / (f.sum() * g.dx * g.dvol)
    with pytest.raises(NumericalInstability):
        evolve_nonlinear_vp(KineticState(f, np.zeros(g.Nx), g), dt=0.05, horizon=1.0)


def test_small_amplitude_matches_linear(bump1):
    g = _grid1(bump1)
    mu = sample_profile(bump1, g)[0]
    d = 1e-6
    g0 = np.cos(K_REF * g.x)[:, None] * mu[None]
    lin = evolve_linear_vp(d * g0, bump1, g, dt=0.05, horizon=10.0)
    non = evolve_nonlinear_vp(KineticState(mu[None] + d * g0, np.zeros(g.Nx), g), dt=0.05,
                              horizon=10.0)
    diff = non.final.f - mu[None] - lin.final.f
    assert l2(non.final.f - mu[None], g) < 1e-4
    assert l2(diff, g) / l2(lin.final.f, g) < 1e-3


def test_vm_gauss_with_transverse_field(maxw2):
    g = PhaseSpaceGrid(M_REF, 16, 2, 32, maxw2.vmax_decay)
    mu = sample_profile(maxw2, g)[0]
    st = vm_state(g, mu[None] * (1 + 0.05 * np.cos(K_REF * g.x))[:, None, None], 0.2)
    st.E[1] = 1e-2 * np.cos(K_REF * g.x)
    tr = evolve_nonlinear_vm(st, dt=0.05, horizon=10.0, mu=maxw2, diag_every=5)
    assert tr["gauss"].max() < 1e-8
    assert tr["B"].max() > 0
    assert np.ptp(tr["mass"]) / M_REF < 1e-10
    assert np.ptp(tr["energy"]) / tr["energy"][0] < 1e-4


def test_vm_rejects_gauss_violation(maxw2):
    g = PhaseSpaceGrid(M_REF, 16, 2, 32, maxw2.vmax_decay)
    mu = sample_profile(maxw2, g)[0]
    st = vm_state(g, mu[None] * (1 + 0.05 * np.cos(K_REF * g.x))[:, None, None], 0.2)
    st.E[0] = 0.0
    with pytest.raises(ValueError, match="Gauss"):
        evolve_nonlinear_vm(st, dt=0.05, horizon=1.0)


def test_eps_zero_dispatches_to_vp(maxw2):
    g = PhaseSpaceGrid(M_REF, 16, 2, 32, maxw2.vmax_decay)
    mu = sample_profile(maxw2, g)[0]
    st = vm_state(g, mu[None] * (1 + 0.05 * np.cos(K_REF * g.x))[:, None, None], 1.0)
    tr = evolve_nonlinear_vm(st, eps=0.0, dt=0.05, horizon=1.0)
    assert tr.meta["dispatched"] == "vp"
    st.E[1] = 1e-3
    with pytest.raises(ValueError, match="transverse"):
        evolve_nonlinear_vm(st, eps=0.0, dt=0.05, horizon=1.0)
    with pytest.raises(ValueError):
        VMFrame.classical(0.0)


def test_seeded_mode_stays_positive(bump2, mode16):
    st, cert = seed_state(mode16, bump2, 0.1, 2)
    assert cert.small and cert.nonnegative
    tr = evolve_nonlinear_vm(st, dt=0.05, horizon=15.0, diag_every=10)
    f = tr.final.f
    assert f.min() > -1e-8 * f.max()


def _halving_ratios(run, dts, grid):
    finals = [run(dt) for dt in dts]
    errs = [l2(a - b, grid) for a, b in zip(finals, finals[1:])]
    return [e0 / e1 for e0, e1 in zip(errs, errs[1:])]


def test_vp_second_order(bump1):
    g = _grid1(bump1)
    mu = sample_profile(bump1, g)[0]
    f = mu[None] * (1 + 0.01 * np.cos(K_REF * g.x))[:, None]

    def run(dt):
        return evolve_nonlinear_vp(KineticState(f, np.zeros(g.Nx), g), dt=dt, horizon=5.0).final.f

    for r in _halving_ratios(run, (0.1, 0.05, 0.025, 0.0125), g):
        assert 3.5 < r < 4.5


def test_vm_second_order(bump2, mode16):
    st, _ = seed_state(mode16, bump2, 0.1, 2)
    st.E[1] = 1e-3 * np.cos(K_REF * mode16.grid.x)

    def run(dt):
        return evolve_nonlinear_vm(st, dt=dt, horizon=5.0, diag_every=20).final.f

    for r in _halving_ratios(run, (0.1, 0.05, 0.025), mode16.grid):
        assert 3.5 < r < 4.5


def test_frames_are_distinct():
    c, q = VMFrame.classical(0.1), VMFrame.quasineutral(0.1)
    assert c.wave_alpha == pytest.approx(10.0) and c.lorentz == pytest.approx(0.1)
    assert q.ampere == pytest.approx(100.0) and math.isclose(q.lorentz, 1.0)
