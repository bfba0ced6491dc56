import math

import numpy as np
import pytest
from scipy.special import wofz

from vmkit.equilibria import (check_delta_condition, make_profile, marginalize, penrose_integral,
                              penrose_report, profile_report)


def _penrose_oracle(a, sigma):
    # I(0) = Re int mu_e'(s)/(s - i0) ds for the two-Gaussian marginal, via Faddeeva
    z = np.array([(0 - a), (0 + a)]) / (math.sqrt(2) * sigma) + 1e-14j
    Z = 1j * math.sqrt(math.pi) * wofz(z)
    return float(np.mean(-2 * (1 + z * Z)).real / (2 * sigma**2))


def test_profiles_normalized():
    for kind, params in [("maxwellian", {"sigma": 1.0}), ("double_bump", {"a": 2.0, "sigma": 0.5}),
                         ("super_gaussian", {"sigma": 1.0})]:
        p = make_profile(kind, params, dv=2)
        v, h = p.grid_1d(n_per_scale=12)
        mu = p.evaluate(p.mesh(v))
        assert abs(mu.sum() * h * h - 1.0) < 1e-8, kind


def test_gradient_matches_finite_difference():
    p = make_profile("double_bump", {"a": 2.0, "sigma": 0.5}, dv=2)
    pts = np.array([[0.3, -0.2], [1.7, 0.4], [-2.2, 0.1]])
    g = p.gradient(pts)
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (p.evaluate(pts + e) - p.evaluate(pts - e)) / (2 * h)
        assert np.allclose(g[..., i], fd, rtol=1e-6, atol=1e-10)


def test_marginal_integrates_out_v2():
    p = make_profile("double_bump", {"a": 2.0, "sigma": 0.5}, dv=2)
    m = marginalize(p)
    s = np.linspace(-3, 3, 7)
    ref = 0.5 * sum(np.exp(-0.5 * (s - c) ** 2 / 0.25) / math.sqrt(2 * math.pi * 0.25) for c in (2, -2))
    assert np.allclose(m.evaluate(s), ref, rtol=1e-10, atol=1e-14)


def test_maxwellian_fails_sharp_penrose():
    rep = profile_report(make_profile("maxwellian", {"sigma": 1.0}, dv=1))
    assert not rep.sharp_pass
    assert not rep.classical_pass
    assert rep.candidates == ()


def test_double_bump_integral_matches_faddeeva():
    m = marginalize(make_profile("double_bump", {"a": 2.0, "sigma": 1.0}, dv=1))
    val = penrose_integral(m, 0.0)
    assert val == pytest.approx(0.2799761491303, abs=1e-9)
    assert val == pytest.approx(_penrose_oracle(2.0, 1.0), abs=1e-9)


def test_sharp_vs_classical():
    rep = profile_report(make_profile("double_bump", {"a": 2.0, "sigma": 0.5}, dv=2))
    assert rep.sharp_pass
    assert rep.candidate_sbar == [pytest.approx(0.0, abs=1e-8)]
    assert rep.integral_value[0] == pytest.approx(_penrose_oracle(2.0, 0.5), abs=1e-9)
    # far below 4 pi^2: the classical criterion stays silent
    assert not rep.classical_pass


def test_sharp_pass_flips_with_separation():
    flags = []
    for a in (0.5, 1.0, 1.5, 2.0, 3.0):
        m = marginalize(make_profile("double_bump", {"a": a, "sigma": 1.0}, dv=1))
        flags.append(penrose_report(m).sharp_pass)
    assert flags == [False, False, True, True, True]


@pytest.mark.parametrize("a,sigma", [(2.0, 0.5), (2.0, 1.0), (3.0, 0.7)])
def test_excluded_point_agrees_with_taylor(a, sigma):
    # the integrand is only regular at critical points of mu_e; s = 0 is one here
    m = marginalize(make_profile("double_bump", {"a": a, "sigma": sigma}, dv=2))
    t = penrose_integral(m, 0.0, method="taylor")
    e = penrose_integral(m, 0.0, method="exclude")
    assert abs(t - e) < 1e-8


def test_delta_condition_bounded_for_gaussians():
    rep = check_delta_condition(make_profile("maxwellian", {"sigma": 1.0}, dv=2))
    assert rep.bounded
    assert np.isfinite(rep.sup)


def test_tabulated_profile(tmp_path):
    v = np.linspace(-8, 8, 801)
    mu = np.exp(-0.5 * v**2)
    path = tmp_path / "mu.csv"
    np.savetxt(path, np.column_stack([v, mu]), delimiter=",", header="v,mu")
    p = make_profile("tabulated", {"path": str(path)}, dv=1)
    ref = make_profile("maxwellian", {"sigma": 1.0}, dv=1)
    s = np.linspace(-3, 3, 13)
    assert np.allclose(p.evaluate(s), ref.evaluate(s), atol=1e-8)
    assert not profile_report(p).sharp_pass


def test_bad_inputs():
    with pytest.raises(ValueError):
        make_profile("lorentzian", {"sigma": 1.0})
    with pytest.raises(ValueError):
        make_profile("maxwellian", {"sigma": -1.0})
