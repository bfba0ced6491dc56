import math

import numpy as np
import pytest

from vmkit import kernels
from vmkit.core import (KineticState, NormSpec, PhaseSpaceGrid, ddv, ddx, growth_rate_fit, hnm_norm,
                        l2, loglog_slope, mean_zero_check, moments, read_state, solve_poisson,
                        sobolev_norm, write_state)


@pytest.fixture
def g2():
    return PhaseSpaceGrid(2 * math.pi, 16, 2, 32, 6.0)


def test_grid_validation():
    with pytest.raises(ValueError):
        PhaseSpaceGrid(10.0, 24, 1, 64, 6.0)
    with pytest.raises(ValueError):
        PhaseSpaceGrid(10.0, 16, 3, 64, 6.0)
    with pytest.raises(ValueError):
        PhaseSpaceGrid(-1.0, 16, 1, 64, 6.0)


def test_vhat_bounded(g2):
    for eps in (0.0, 0.1, 1.0):
        u1, u2 = g2.vhat(eps)
        sp = np.sqrt(u1**2 + u2**2)
        vv = np.sqrt(g2.vnorm2())
        assert np.all(sp <= vv + 1e-15)
        if eps:
            assert np.all(sp < 1 / eps)


def test_spectral_derivatives(g2):
    x = g2.x
    u = np.sin(3 * x)
    assert np.allclose(ddx(u, g2), 3 * np.cos(3 * x), atol=1e-12)
    v = g2.v
    w = np.exp(-v**2)
    f = np.ones((g2.Nx, g2.Nv, g2.Nv)) * w[None, :, None]
    assert np.allclose(ddv(f, g2, 1)[0, :, 0], -2 * v * w, atol=1e-6)


def test_poisson_single_mode():
    g = PhaseSpaceGrid(4 * math.pi, 32, 1, 16, 5.0)
    x = g.x
    phi, E = solve_poisson(0.1 * np.cos(0.5 * x), g)
    assert np.allclose(E, 0.2 * np.sin(0.5 * x), atol=1e-13)
    with pytest.raises(ValueError):
        solve_poisson(0.1 + np.cos(0.5 * x), g)


def test_parseval_order_zero(g2):
    f = np.random.default_rng(1).standard_normal(g2.shape)
    assert sobolev_norm(f, g2, NormSpec(0.0)) == pytest.approx(l2(f, g2), rel=1e-12)
    u = np.random.default_rng(2).standard_normal(g2.Nx)
    assert sobolev_norm(u, g2, NormSpec(0.0)) == pytest.approx(l2(u, g2), rel=1e-12)


def test_norm_monotonicity(g2):
    f = np.random.default_rng(3).standard_normal(g2.shape) * np.exp(-g2.vnorm2())[None]
    vals = [sobolev_norm(f, g2, NormSpec(o)) for o in (-1.0, -0.5, 0.0, 0.5, 1.0)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_hnm_norm_reduces_to_l2(g2):
    f = np.random.default_rng(4).standard_normal(g2.shape)
    assert hnm_norm(f, g2, 0, 0) == pytest.approx(l2(f, g2), rel=1e-12)


def test_moments_backends_agree(g2):
    f = np.random.default_rng(5).random(g2.shape)
    v = g2.v
    a = kernels.moments_2v_np(f, v, v, 0.3)
    b = kernels.moments_2v(f, v, v, 0.3)
    for x, y in zip(a, b):
        assert np.allclose(x, y, rtol=1e-12, atol=1e-12)
    rho, j = moments(f, g2, 0.0)
    assert np.allclose(rho, f.sum(axis=(1, 2)) * g2.dvol)
    assert np.allclose(j[0], np.einsum("ijk,j->i", f, v) * g2.dvol)


def test_cauchy_backends_agree():
    s = np.linspace(-4, 4, 401)
    w = -s * np.exp(-s**2)
    om = np.array([0.3j, 1.0 + 0.2j, -2 + 1e-3j])
    a = kernels.cauchy_trap_np(w, s, om)
    b = kernels.cauchy_trap(w, s, om)
    assert np.allclose(a[0], b[0], rtol=1e-12) and np.allclose(a[1], b[1], rtol=1e-12)
    a = kernels.cauchy_sinc_np(w, s[0], s[1] - s[0], om)
    b = kernels.cauchy_sinc(w, s[0], s[1] - s[0], om)
    assert np.allclose(a[0], b[0], rtol=1e-11) and np.allclose(a[1], b[1], rtol=1e-11)


def test_growth_fit_exact():
    t = np.linspace(0, 10, 101)
    fit = growth_rate_fit(t, 3.0 * np.exp(0.25 * t))
    assert fit.rate == pytest.approx(0.25, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0)
    with pytest.raises(ValueError):
        growth_rate_fit(t[:5], np.exp(t[:5]))


def test_loglog_slope():
    e = np.array([0.1, 0.05, 0.02, 0.01])
    s, r2 = loglog_slope(e, 7 * e**3)
    assert s == pytest.approx(3.0, abs=1e-12) and r2 == pytest.approx(1.0)


def test_mean_zero_check(g2):
    f = np.random.default_rng(6).standard_normal(g2.shape)
    with pytest.raises(ValueError):
        mean_zero_check(f + 1.0, g2)
    mean_zero_check(f - f.mean(), g2)


def test_state_roundtrip(tmp_path, g2):
    rng = np.random.default_rng(7)
    st = KineticState(rng.random(g2.shape), rng.random((2, g2.Nx)), g2, rng.random(g2.Nx), 1.25, 0.1)
    p = tmp_path / "s.vmkt"
    write_state(p, st)
    back = read_state(p)
    assert back.grid == g2
    assert np.array_equal(back.f, st.f) and np.array_equal(back.E, st.E) and np.array_equal(back.B, st.B)
    assert back.s == 1.25 and back.eps == 0.1
