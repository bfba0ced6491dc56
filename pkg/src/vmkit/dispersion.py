"""Penrose dispersion function, unstable roots and growing modes.

D(k, w) = 1 - k^-2 * int mu_e'(s) / (s - w) ds for Im w > 0.  The Cauchy
integral is evaluated by sinc quadrature: with mu_e' sampled on a uniform
grid, each sample contributes h_j (e^{i pi z_j} - 1)/z_j, z_j = (w - s_j)/ds,
which is exact for band-limited data and stays accurate down to Im w -> 0+.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import kernels
from .core import hnm_norm, sample_profile
from .equilibria import marginalize

ROOT_TOL = 1e-10


class RootNotFound(RuntimeError):
    pass


class BoundaryTooClose(ValueError):
    pass


@dataclass(frozen=True)
class DispersionRoot:
    k0: float
    omega0: complex
    residual: float

    @property
    def lambda0(self):
        return -1j * self.k0 * self.omega0

    @property
    def growth_rate(self):
        return self.k0 * self.omega0.imag

    def row(self, M=None):
        lam = self.lambda0
        return {"M": M, "k": self.k0, "Re_omega": self.omega0.real, "Im_omega": self.omega0.imag,
                "Re_lambda": lam.real, "Im_lambda": lam.imag, "residual": self.residual}


def _cauchy(marginal, omega):
    s0, ds, h = marginal.samples
    return kernels.cauchy_sinc(h, s0, ds, omega)


def _check_upper(omega):
    w = np.asarray(omega, dtype=complex)
    if np.any(w.imag <= 0):
        raise ValueError("dispersion function is only evaluated for Im(omega) > 0")
    return w


def dispersion_value(marginal, k, omega):
    """D(k, omega); scalar in, scalar out."""
    if not k > 0:
        raise ValueError("k must be positive")
    w = _check_upper(omega)
    c, _ = _cauchy(marginal, w.ravel())
    out = 1.0 - c / k**2
    return complex(out[0]) if w.ndim == 0 else out.reshape(w.shape)


def dispersion_derivative(marginal, k, omega):
    """dD/domega = -k^-2 int mu_e'(s)/(s - omega)^2 ds."""
    w = _check_upper(omega)
    _, d = _cauchy(marginal, w.ravel())
    out = -d / k**2
    return complex(out[0]) if w.ndim == 0 else out.reshape(w.shape)


def _value_and_derivative(marginal, k, omega):
    c, d = _cauchy(marginal, np.atleast_1d(omega))
    return 1.0 - c / k**2, -d / k**2


def boundary_limit(marginal, k, x):
    """lim_{gamma -> 0+} D(k, x + i gamma) for real x."""
    c, _ = _cauchy(marginal, np.atleast_1d(np.asarray(x, dtype=complex)))
    out = 1.0 - c / k**2
    return out if np.ndim(x) else complex(out[0])


def cutoff_wavenumber(marginal, sbar=0.0):
    """k with lim_{gamma->0+} D(k, sbar + i gamma) = 0, i.e. sqrt of the Penrose integral."""
    val = boundary_limit(marginal, 1.0, sbar)
    I = 1.0 - val.real
    if I <= 0:
        return None
    return math.sqrt(I)


# ---------------------------------------------------------------------------
# argument principle

def _contour(rect, n):
    x0, x1, y0, y1 = rect
    t = np.linspace(0.0, 1.0, n + 1)
    sides = [
        (x0 + (x1 - x0) * t) + 1j * y0,
        x1 + 1j * (y0 + (y1 - y0) * t),
        (x1 - (x1 - x0) * t) + 1j * y1,
        x0 + 1j * (y1 - (y1 - y0) * t),
    ]
    return sides


def winding_number(marginal, k, rect, n):
    """Trapezoid value of (1/2 pi i) * contour integral of D'/D, plus min |D|."""
    total = 0.0 + 0.0j
    dmin = np.inf
    pts = np.concatenate(_contour(rect, n))
    D, dD = _value_and_derivative(marginal, k, pts)
    dmin = float(np.min(np.abs(D)))
    q = (dD / D).reshape(4, n + 1)
    P = pts.reshape(4, n + 1)
    for side in range(4):
        h = P[side, 1] - P[side, 0]
        total += h * (q[side].sum() - 0.5 * (q[side, 0] + q[side, -1]))
    ph, _ = _phase_count(D, n)
    return total / (2j * np.pi), dmin, ph


def _phase_count(D, n):
    """Winding from summed phase increments, and the largest single increment."""
    phase = np.angle(D.reshape(4, n + 1))
    inc = np.diff(phase, axis=1)
    inc = (inc + np.pi) % (2 * np.pi) - np.pi
    return float(inc.sum() / (2 * np.pi)), float(np.max(np.abs(inc)))


def _adaptive_phase_count(marginal, k, rect, max_inc=np.pi / 16, max_pts=2**20):
    total = 0.0
    for side in _contour(rect, 256):
        z = side
        D = _value_and_derivative(marginal, k, z)[0]
        while True:
            inc = np.angle(D[1:] / D[:-1])
            bad = np.nonzero(np.abs(inc) > max_inc)[0]
            if bad.size == 0 or z.size > max_pts:
                break
            mid = 0.5 * (z[bad] + z[bad + 1])
            Dm = _value_and_derivative(marginal, k, mid)[0]
            z = np.insert(z, bad + 1, mid)
            D = np.insert(D, bad + 1, Dm)
        total += float(np.sum(np.angle(D[1:] / D[:-1])))
    return total / (2 * np.pi)


def count_unstable_roots(marginal, k, rect=(-5.0, 5.0, 1e-4, 5.0), n0=64, n_max=2**12,
                         tol=1e-3, dmin_tol=1e-8):
    """Number of zeros of D(k, .) inside ``rect`` = (xmin, xmax, ymin, ymax)."""
    if not rect[2] > 0:
        raise ValueError("rectangle must lie strictly in the upper half-plane")
    if not (rect[1] > rect[0] and rect[3] > rect[2]):
        raise ValueError("degenerate rectangle")
    n = n0
    prev = None
    while n <= n_max:
        w, dmin, ph = winding_number(marginal, k, rect, n)
        if dmin < dmin_tol:
            raise BoundaryTooClose(f"|D| = {dmin:.2e} on the contour: a root sits on the boundary")
        near = abs(w - round(w.real))
        if near < tol and prev is not None and abs(w - prev) < tol and abs(ph - round(w.real)) < tol:
            return int(round(w.real))
        prev = w
        n *= 2
    # a root just outside the contour makes D'/D spiky; unwrapping the
    # phase on adaptively refined sides still gives an exact count
    ph = _adaptive_phase_count(marginal, k, rect)
    if abs(ph - round(ph)) < 1e-6:
        return int(round(ph))
    raise RuntimeError(f"winding number {w:.4f} not integral after {n_max} points per side")


# ---------------------------------------------------------------------------
# root finding

def _newton(marginal, k, guess, tol=ROOT_TOL, max_iter=60):
    w = complex(guess)
    for _ in range(max_iter):
        D, dD = _value_and_derivative(marginal, k, w)
        D, dD = complex(D[0]), complex(dD[0])
        if abs(D) < tol:
            return w, abs(D)
        if dD == 0 or not np.isfinite(dD):
            break
        step = D / dD
        lam = 1.0
        while (w - lam * step).imag <= 0 and lam > 1e-6:
            lam *= 0.5
        w_new = w - lam * step
        if not np.isfinite(w_new):
            break
        w = w_new
    D = complex(_value_and_derivative(marginal, k, w)[0][0])
    return w, abs(D)


def purely_growing_root(marginal, k, gamma_max=None):
    """Largest gamma > 0 with D(k, i gamma) = 0 for an even marginal."""
    if not marginal.even:
        raise ValueError("imaginary-axis search needs an even marginal")

    def F(g):
        return float(dispersion_value(marginal, k, 1j * g).real)

    lo = 1e-9
    if F(lo) >= 0:
        raise RootNotFound(f"no purely growing root at k={k:g}")
    hi = gamma_max or 1.0
    while F(hi) < 0:
        hi *= 2.0
        if hi > 1e4:
            raise RootNotFound("dispersion stays negative on the imaginary axis")
    grid = np.geomspace(lo, hi, 200)
    vals = np.array([F(g) for g in grid])
    idx = np.where((vals[:-1] < 0) & (vals[1:] >= 0))[0]
    i = idx[-1]
    g = optimize.brentq(F, grid[i], grid[i + 1], xtol=1e-15, rtol=1e-15)
    w, res = _newton(marginal, k, 1j * g)
    if res >= ROOT_TOL or w.imag <= 0:
        w, res = 1j * g, abs(dispersion_value(marginal, k, 1j * g))
    return DispersionRoot(float(k), complex(w), float(res))


def find_root(marginal, k, guess, tol=ROOT_TOL, im_tol=1e-8):
    """Newton polish from ``guess``; even marginals fall back to bisection."""
    w, res = _newton(marginal, k, guess, tol)
    if not (res < tol and w.imag > im_tol):
        if marginal.even:
            root = purely_growing_root(marginal, k)
            w, res = root.omega0, root.residual
        if not (res < tol):
            raise RootNotFound(f"Newton failed at k={k:g} (|D| = {res:.2e})")
    if w.imag <= im_tol:
        raise RootNotFound(f"root {w} is not in the open upper half-plane")
    return DispersionRoot(float(k), complex(w), float(res))


def default_rect(marginal):
    S = marginal.domain
    return (-S, S, 1e-4, S)


def _safe_count(marginal, k, rect):
    r = list(rect)
    for _ in range(6):
        try:
            return count_unstable_roots(marginal, k, tuple(r)), tuple(r)
        except BoundaryTooClose:
            r[2] *= 0.37
            r[0] -= 0.013
            r[1] += 0.011
            r[3] *= 1.07
    raise BoundaryTooClose("could not move the contour off a root")


def find_roots_in_rect(marginal, k, rect, depth=0, max_depth=14):
    """All roots in ``rect`` by winding-count subdivision and Newton."""
    n, rect = _safe_count(marginal, k, rect)
    if n == 0:
        return []
    x0, x1, y0, y1 = rect
    if n == 1:
        c = complex(0.5 * (x0 + x1), 0.5 * (y0 + y1))
        try:
            w, res = _newton(marginal, k, c)
            if res < ROOT_TOL and x0 <= w.real <= x1 and y0 <= w.imag <= y1:
                return [DispersionRoot(float(k), complex(w), float(res))]
        except (ZeroDivisionError, FloatingPointError):
            pass
    if depth >= max_depth:
        raise RootNotFound("subdivision depth exhausted")
    if (x1 - x0) >= (y1 - y0):
        xm = 0.5 * (x0 + x1) + 1e-7 * (x1 - x0)
        parts = [(x0, xm, y0, y1), (xm, x1, y0, y1)]
    else:
        ym = 0.5 * (y0 + y1) + 1e-7 * (y1 - y0)
        parts = [(x0, x1, y0, ym), (x0, x1, ym, y1)]
    out = []
    for p in parts:
        out.extend(find_roots_in_rect(marginal, k, p, depth + 1, max_depth))
    return out


def unstable_roots(marginal, k, rect=None):
    rect = default_rect(marginal) if rect is None else rect
    if marginal.even:
        n, rect = _safe_count(marginal, k, rect)
        if n == 0:
            return []
        try:
            r = purely_growing_root(marginal, k)
            if n == 1:
                return [r]
        except RootNotFound:
            pass
    return find_roots_in_rect(marginal, k, rect)


@dataclass(frozen=True)
class BoxScan:
    M0: float | None
    best: DispersionRoot | None
    rows: list = field(default_factory=list)
    ties: int = 0

    @property
    def found(self):
        return self.M0 is not None


def minimal_unstable_box(profile, direction=None, M_grid=(), rect=None, k_max=None):
    """Smallest M in ``M_grid`` whose fundamental k = 2 pi/M is unstable.

    Also returns the harmonic 2 pi n/M with the largest Re(lambda); ties go
    to the smallest k.
    """
    marg = marginalize(profile, direction)
    rect = default_rect(marg) if rect is None else rect
    rows = []
    for M in sorted(M_grid):
        k = 2 * np.pi / M
        n, _ = _safe_count(marg, k, rect)
        rows.append({"M": M, "k": k, "count": n})
        if n == 0:
            continue
        kcap = k_max if k_max is not None else 4.0 * (cutoff_wavenumber(marg) or 1.0)
        best, ties = None, 0
        h = 1
        while 2 * np.pi * h / M <= kcap:
            kh = 2 * np.pi * h / M
            for r in unstable_roots(marg, kh, rect):
                row = r.row(M)
                row["harmonic"] = h
                rows.append(row)
                if best is None or r.growth_rate > best.growth_rate * (1 + 1e-12):
                    best, ties = r, 0
                elif abs(r.growth_rate - best.growth_rate) <= 1e-12 * best.growth_rate:
                    ties += 1
            h += 1
        return BoxScan(float(M), best, rows, ties)
    return BoxScan(None, None, rows, 0)


def fastest_wavenumber(marginal, k_lo=None, k_hi=None, n=64):
    """k maximizing the purely growing rate k * gamma(k) on a fixed scan."""
    kc = cutoff_wavenumber(marginal)
    if kc is None:
        raise RootNotFound("profile is Penrose stable")
    k_lo = 0.05 * kc if k_lo is None else k_lo
    k_hi = 0.999 * kc if k_hi is None else k_hi
    best = None
    for k in np.linspace(k_lo, k_hi, n):
        try:
            r = purely_growing_root(marginal, float(k))
        except RootNotFound:
            continue
        if best is None or r.growth_rate > best.growth_rate:
            best = r
    if best is None:
        raise RootNotFound("no unstable wavenumber on the scan")
    return best


# ---------------------------------------------------------------------------
# growing mode

@dataclass
class GrowingMode:
    """e^{lambda s} e^{i k x} fhat(v) on a phase-space grid.

    ``fhat_unit`` is the eigenfunction with unit charge; ``fhat`` is rescaled
    so the (n, m) weighted norm of e^{ikx} fhat is one.
    """

    root: DispersionRoot
    grid: object
    fhat_unit: np.ndarray
    scale: float
    norm: tuple
    omega_grid: complex
    harmonic: int

    @property
    def fhat(self):
        return self.scale * self.fhat_unit

    @property
    def phihat(self):
        return self.scale / self.root.k0**2

    @property
    def lam(self):
        return -1j * self.root.k0 * self.omega_grid

    @property
    def rate(self):
        return self.lam.real

    def complex_field(self):
        e = np.exp(1j * self.root.k0 * self.grid.x)
        return e.reshape((-1,) + (1,) * self.grid.dv) * self.fhat[None]

    def g1(self, s=0.0):
        """Re(e^{lambda s} e^{ikx} fhat)."""
        return (np.exp(self.lam * s) * self.complex_field()).real

    def dg1(self, s=0.0):
        return (self.lam * np.exp(self.lam * s) * self.complex_field()).real


def discrete_dispersion(k, weights, v, omega):
    a, b = kernels.cauchy_trap(weights, v, omega)
    return 1.0 - a / k**2, -b / k**2


def build_growing_mode(root, profile, grid, norm=(2, 3), polish=True):
    """Sample the eigenfunction mu_e'/(k^2 (v1 - omega)) and normalize it."""
    if root.residual >= 1e-6:
        raise ValueError(f"root residual {root.residual:.2e} too large")
    k = root.k0
    h = k * grid.M / (2 * np.pi)
    if abs(h - round(h)) > 1e-9:
        raise ValueError(f"k0 = {k} is not a harmonic of the box M = {grid.M}")
    mu, grads = sample_profile(profile, grid)
    d1 = grads[0]
    v = grid.v
    W = (d1 if grid.dv == 1 else d1.sum(axis=1)) * grid.dvol
    w = complex(root.omega0)
    if polish:
        for _ in range(50):
            D, dD = discrete_dispersion(k, W, v, w)
            D, dD = complex(D[0]), complex(dD[0])
            if abs(D) < 1e-14:
                break
            w = w - D / dD
        if w.imag <= 0:
            raise RootNotFound("discrete polish left the upper half-plane")
    den = k * k * (v - w)
    if np.min(np.abs(den)) == 0:
        raise ZeroDivisionError("eigenfunction denominator vanishes")
    fh = d1 / (den if grid.dv == 1 else den[:, None])
    mode = GrowingMode(root, grid, fh, 1.0, tuple(norm), w, int(round(h)))
    nrm = hnm_norm(mode.complex_field(), grid, *norm)
    mode.scale = 1.0 / nrm
    return mode
