"""Homogeneous velocity equilibria, marginals and Penrose-type criteria."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import CubicSpline

KINDS = ("maxwellian", "double_bump", "super_gaussian", "tabulated")
TAIL_CUT = 1e-16
FOUR_PI2 = 4.0 * math.pi**2


def _as_points(v, dv):
    v = np.asarray(v, dtype=float)
    if dv == 1:
        return v
    if v.shape[-1] != dv:
        raise ValueError(f"expected trailing axis of length {dv}, got shape {v.shape}")
    return v


@dataclass(frozen=True, eq=False)
class VelocityProfile:
    """Normalized equilibrium mu(v) on R^dv.

    For dv == 1 points are plain arrays; for dv > 1 the last axis holds the
    velocity components.
    """

    kind: str
    params: dict
    dv: int
    norm: float = 1.0
    vmax_decay: float = 0.0
    table: tuple | None = field(default=None, repr=False)

    # raw (unnormalized) density and gradient -------------------------
    def _raw(self, v):
        k, p = self.kind, self.params
        if k == "tabulated":
            spl = self._spline
            lo, hi = self.table[0][0], self.table[0][-1]
            out = np.where((v >= lo) & (v <= hi), spl(np.clip(v, lo, hi)), 0.0)
            return out
        r2 = v * v if self.dv == 1 else np.sum(v * v, axis=-1)
        s = p["sigma"]
        if k == "maxwellian":
            return np.exp(-0.5 * r2 / s**2)
        if k == "super_gaussian":
            return np.exp(-(r2 / s**2) ** 2)
        a = p["a"]
        x1 = v if self.dv == 1 else v[..., 0]
        q = r2 + a * a
        return np.exp(-0.5 * (q - 2 * a * x1) / s**2) + np.exp(-0.5 * (q + 2 * a * x1) / s**2)

    def _raw_grad(self, v):
        k, p = self.kind, self.params
        if k == "tabulated":
            lo, hi = self.table[0][0], self.table[0][-1]
            return np.where((v >= lo) & (v <= hi), self._spline(np.clip(v, lo, hi), 1), 0.0)
        s = p["sigma"]
        if k == "maxwellian":
            base = self._raw(v)
            return -v / s**2 * (base if self.dv == 1 else base[..., None])
        if k == "super_gaussian":
            r2 = v * v if self.dv == 1 else np.sum(v * v, axis=-1)
            c = -4.0 * r2 / s**4 * self._raw(v)
            return c * v if self.dv == 1 else c[..., None] * v
        a = p["a"]
        if self.dv == 1:
            g1 = np.exp(-0.5 * (v - a) ** 2 / s**2)
            g2 = np.exp(-0.5 * (v + a) ** 2 / s**2)
            return -((v - a) * g1 + (v + a) * g2) / s**2
        sh = np.zeros(self.dv)
        sh[0] = a
        r2m = np.sum((v - sh) ** 2, axis=-1)
        r2p = np.sum((v + sh) ** 2, axis=-1)
        g1 = np.exp(-0.5 * r2m / s**2)[..., None]
        g2 = np.exp(-0.5 * r2p / s**2)[..., None]
        return -((v - sh) * g1 + (v + sh) * g2) / s**2

    @cached_property
    def _spline(self):
        v, m = self.table
        return CubicSpline(v, m, bc_type="clamped")

    def evaluate(self, v):
        return self.norm * self._raw(_as_points(v, self.dv))

    def gradient(self, v):
        return self.norm * self._raw_grad(_as_points(v, self.dv))

    @property
    def scale(self):
        """Smallest length scale, used to size quadrature grids."""
        if self.kind == "tabulated":
            v = self.table[0]
            return 4.0 * float(np.min(np.diff(v)))
        s = self.params["sigma"]
        return s / 2.0 if self.kind == "super_gaussian" else s

    def record(self):
        rec = {"kind": self.kind, "dv": self.dv, "params": dict(self.params),
               "vmax": self.vmax_decay}
        return rec

    def grid_1d(self, n_per_scale=8, vmax=None):
        vm = self.vmax_decay if vmax is None else vmax
        h = self.scale / n_per_scale
        n = int(math.ceil(2 * vm / h))
        n += n % 2
        h = 2 * vm / n
        return -vm + (np.arange(n) + 0.5) * h, h

    def mesh(self, v1d):
        """Cartesian points (..., dv) for a 1D axis repeated dv times."""
        if self.dv == 1:
            return v1d
        axes = np.meshgrid(*([v1d] * self.dv), indexing="ij")
        return np.stack(axes, axis=-1)


def _radial_decay(profile, level=TAIL_CUT):
    """Radius beyond which mu < level along the slowest-decaying direction."""
    e = np.zeros(profile.dv) if profile.dv > 1 else None
    if e is not None:
        e[0] = 1.0

    def along(r):
        pt = r if e is None else r * e
        return float(profile.evaluate(np.asarray(pt))) - level

    hi = 1.0
    while along(hi) > 0:
        hi *= 1.5
        if hi > 1e6:
            raise ValueError("profile does not decay")
    return optimize.brentq(along, 0.0 if along(0.0) > 0 else hi / 1.5, hi, xtol=1e-10)


def make_profile(kind, params=None, dv=1, table=None):
    """Build a normalized equilibrium.

    kinds: maxwellian(sigma), double_bump(a, sigma) with bumps at +-a e1,
    super_gaussian(sigma) ~ exp(-|v/sigma|^4), tabulated (dv=1 only, from a
    two-column ``table`` of (v, mu) samples or ``params['path']``).
    """
    params = dict(params or {})
    if kind not in KINDS:
        raise ValueError(f"unknown profile kind {kind!r}; choose from {KINDS}")
    if dv not in (1, 2, 3):
        raise ValueError("dv must be 1, 2 or 3")
    tab = None
    if kind == "tabulated":
        if dv != 1:
            raise ValueError("tabulated profiles are one-dimensional")
        if table is None:
            if "path" not in params:
                raise ValueError("tabulated profile needs a table or params['path']")
            table = load_table(params["path"])
        v, m = (np.asarray(c, dtype=float) for c in table)
        if v.ndim != 1 or v.shape != m.shape or v.size < 8:
            raise ValueError("table must hold at least 8 (v, mu) rows")
        if np.any(np.diff(v) <= 0):
            raise ValueError("table abscissae must increase")
        if np.any(m <= 0):
            raise ValueError("tabulated profile must be positive")
        tab = (v, m)
    else:
        sigma = params.get("sigma", 1.0)
        if not sigma > 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        params["sigma"] = float(sigma)
        if kind == "double_bump":
            a = params.get("a", 2.0)
            if not a >= 0:
                raise ValueError(f"bump separation a must be nonnegative, got {a}")
            params["a"] = float(a)
    prof = VelocityProfile(kind, params, dv, 1.0, 0.0, tab)
    # provisional box from the raw profile, then quadrature normalization
    wide = _radial_decay(prof, TAIL_CUT * 1e-4)
    v1d, h = prof.grid_1d(vmax=wide)
    total = float(prof.evaluate(prof.mesh(v1d)).sum() * h**dv)
    if kind == "tabulated":
        # finite support: integrate the spline exactly
        total = float(prof._spline.integrate(tab[0][0], tab[0][-1]))
    if not np.isfinite(total) or total < 1e-300:
        raise ValueError("normalization integral underflow")
    prof = VelocityProfile(kind, params, dv, 1.0 / total, 0.0, tab)
    if kind == "tabulated":
        vmax = float(max(abs(tab[0][0]), abs(tab[0][-1])))
    else:
        vmax = _radial_decay(prof)
    return VelocityProfile(kind, params, dv, 1.0 / total, vmax, tab)


def load_table(path):
    """Read a two-column (v, mu) CSV; lines starting with '#' are skipped."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError:
                continue  # header line
    if not rows:
        raise ValueError(f"no numeric rows in {path}")
    arr = np.array(rows)
    return arr[:, 0], arr[:, 1]


# ---------------------------------------------------------------------------
# marginals

@dataclass(frozen=True, eq=False)
class MarginalProfile:
    """mu_e(s): integral of mu over the hyperplane s e + e_perp."""

    fn: object
    dfn: object
    direction: np.ndarray
    domain: float
    even: bool = True
    scale: float = 1.0

    def evaluate(self, s):
        return self.fn(np.asarray(s, dtype=float))

    def derivative(self, s):
        return self.dfn(np.asarray(s, dtype=float))

    def second_derivative(self, s):
        h = 1e-3 * self.scale
        s = np.asarray(s, dtype=float)
        return (self.dfn(s + h) - self.dfn(s - h)) / (2 * h)

    def third_derivative(self, s):
        h = 1e-2 * self.scale
        s = np.asarray(s, dtype=float)
        return (self.dfn(s + h) - 2 * self.dfn(s) + self.dfn(s - h)) / h**2

    @cached_property
    def samples(self):
        """Uniform samples (s0, ds, mu_e') used by the dispersion quadrature."""
        n = int(max(1024, math.ceil(2 * self.domain / (self.scale / 24))))
        n += n % 2
        s = np.linspace(-self.domain, self.domain, n + 1)
        return float(s[0]), float(s[1] - s[0]), self.derivative(s)


def marginalize(profile, direction=None, n_perp=None):
    """Marginal of ``profile`` along the unit vector ``direction``."""
    dv = profile.dv
    if direction is None:
        direction = np.eye(dv)[0] if dv > 1 else np.array([1.0])
    e = np.atleast_1d(np.asarray(direction, dtype=float))
    if e.size != dv:
        raise ValueError(f"direction must have {dv} components")
    if abs(np.linalg.norm(e) - 1.0) > 1e-12:
        raise ValueError("direction must have unit length")
    S = profile.vmax_decay
    if dv == 1:
        sgn = float(e[0])
        return MarginalProfile(lambda s: profile.evaluate(sgn * s),
                               lambda s: sgn * profile.gradient(sgn * s),
                               e, S, _is_even(profile), profile.scale)
    # orthonormal complement
    q, _ = np.linalg.qr(np.column_stack([e, np.eye(dv)]))
    perp = q[:, 1:dv]
    h = profile.scale / 6.0 if n_perp is None else 2 * S / n_perp
    nt = int(math.ceil(2 * S / h))
    h = 2 * S / nt
    t = -S + (np.arange(nt) + 0.5) * h
    if dv == 2:
        nodes = t[:, None] * perp[:, 0][None, :]
    else:
        a, b = np.meshgrid(t, t, indexing="ij")
        nodes = a.ravel()[:, None] * perp[:, 0] + b.ravel()[:, None] * perp[:, 1]
    wt = h ** (dv - 1)
    block = max(1, 2_000_000 // (nodes.shape[0] * dv))

    def reduce(s, op):
        s = np.asarray(s, dtype=float)
        flat = s.ravel()
        out = np.empty(flat.size)
        for i in range(0, flat.size, block):
            pts = flat[i:i + block, None, None] * e + nodes[None, :, :]
            out[i:i + block] = op(pts).sum(axis=1) * wt
        return out.reshape(s.shape) if s.ndim else float(out[0])

    fn = lambda s: reduce(s, profile.evaluate)  # noqa: E731
    dfn = lambda s: reduce(s, lambda p: profile.gradient(p) @ e)  # noqa: E731
    return MarginalProfile(fn, dfn, e, S, _is_even(profile), profile.scale)


def _is_even(profile):
    if profile.kind != "tabulated":
        return True
    v, _ = profile.table
    probe = np.linspace(0, min(abs(v[0]), abs(v[-1])), 64)
    a, b = profile.evaluate(probe), profile.evaluate(-probe)
    return bool(np.allclose(a, b, rtol=1e-10, atol=1e-14))


# ---------------------------------------------------------------------------
# delta condition

@dataclass(frozen=True)
class DeltaReport:
    sup: float
    bounded: bool
    levels: tuple

    @property
    def value(self):
        return self.sup if self.bounded else math.inf


def _delta_ratio_sup(profile, n):
    vm = profile.vmax_decay
    v1d = np.linspace(-vm, vm, n)
    pts = profile.mesh(v1d)
    mu = profile.evaluate(pts)
    if np.any(mu <= 0):
        raise ValueError("profile vanishes at a sampled point")
    g = profile.gradient(pts)
    if profile.dv == 1:
        gn, r = np.abs(g), np.abs(pts)
    else:
        gn, r = np.linalg.norm(g, axis=-1), np.linalg.norm(pts, axis=-1)
    ratio = gn / ((1 + r) * mu)
    return float(ratio.max()), ratio, r


def check_delta_condition(profile, levels=None):
    """sup |grad mu| / ((1+|v|) mu) on [-vmax, vmax]^dv with a tail classification."""
    if levels is None:
        levels = {1: (2001, 4001), 2: (201, 401), 3: (41, 81)}[profile.dv]
    sups = []
    for n in levels:
        sup, ratio, r = _delta_ratio_sup(profile, n)
        sups.append(sup)
    if profile.kind in ("maxwellian", "double_bump"):
        bounded = True
    elif profile.kind == "super_gaussian":
        bounded = False
    else:
        # tabulated: bounded when the ratio flattens in the outer tenth
        vm = profile.vmax_decay
        outer = ratio[r > 0.9 * vm]
        inner = ratio[(r > 0.7 * vm) & (r <= 0.8 * vm)]
        bounded = bool(outer.size and inner.size and outer.max() <= 2.0 * inner.max())
    return DeltaReport(sups[-1], bounded, tuple(sups))


# ---------------------------------------------------------------------------
# Penrose criteria

@dataclass(frozen=True)
class PenroseCandidate:
    sbar: float
    integral: float
    flat: bool
    symmetric: bool
    points: tuple = ()


@dataclass(frozen=True)
class PenroseReport:
    candidates: tuple
    classical_pass: bool
    sharp_pass: bool
    delta_condition_sup: float = math.nan

    @property
    def candidate_sbar(self):
        return [c.sbar for c in self.candidates]

    @property
    def integral_value(self):
        return [c.integral for c in self.candidates]


def penrose_integral(marginal, sbar, method="taylor", fill=None, epsabs=1e-13, epsrel=1e-11):
    """int (mu_e(s) - mu_e(sbar)) / (s - sbar)^2 ds over R.

    The truncated range [-S, S] is integrated adaptively; the tails add
    -mu_e(sbar) (1/(S - sbar) + 1/(S + sbar)).  ``method='taylor'`` replaces
    the integrand near sbar by mu_e''(sbar)/2, ``'exclude'`` relies on the
    quadrature never sampling sbar itself.
    """
    S = marginal.domain
    m0 = float(marginal.evaluate(sbar))
    half_m2 = 0.5 * float(marginal.second_derivative(sbar))
    h = 1e-4 * marginal.scale if fill is None else fill

    def f(s):
        d = s - sbar
        if method == "taylor" and abs(d) < h:
            return half_m2
        if d == 0.0:
            return half_m2
        return (float(marginal.evaluate(s)) - m0) / (d * d)

    total = 0.0
    for lo, hi in ((-S, sbar), (sbar, S)):
        val, err, info = integrate.quad(f, lo, hi, epsabs=epsabs, epsrel=epsrel,
                                        limit=500, full_output=1)[:3]
        if err > max(1e3 * epsabs, 1e-7 * abs(val)):
            raise RuntimeError(f"Penrose quadrature did not converge (error {err:.2e})")
        total += val
    return total - m0 * (1.0 / (S - sbar) + 1.0 / (S + sbar))


def _local_minima(marginal, n):
    S = marginal.domain
    s = np.linspace(-S, S, n)
    d = marginal.derivative(s)
    tol = 1e-12
    strict, plateaus = [], []
    i = 0
    while i < n - 1:
        if d[i] < -tol and d[i + 1] > tol:
            r = optimize.brentq(lambda x: float(marginal.derivative(x)), s[i], s[i + 1], xtol=1e-14)
            if float(marginal.second_derivative(r)) > 1e-10:
                strict.append(r)
            i += 1
            continue
        if abs(d[i]) <= tol:
            j = i
            while j < n and abs(d[j]) <= tol:
                j += 1
            if j - i >= 2 and i > 0 and j < n and d[i - 1] < -tol and d[j] > tol:
                plateaus.append((s[i], s[j - 1]))
            elif j - i == 1 and i > 0 and j < n and d[i - 1] < -tol and d[j] > tol:
                strict.append(s[i])
            i = j
            continue
        i += 1
    return strict, plateaus


def penrose_report(marginal, n_scan=4001, delta_sup=math.nan):
    """Locate interior minima of mu_e and test both Penrose thresholds."""
    strict, plateaus = _local_minima(marginal, n_scan)
    cands = []
    S = marginal.domain
    mscale = float(np.max(marginal.evaluate(np.linspace(-S, S, 257))))
    for sb in strict:
        t = np.linspace(0, min(S - sb, S + sb), 200)
        sym = bool(np.max(np.abs(marginal.evaluate(sb + t) - marginal.evaluate(sb - t))) <= 1e-10 * mscale)
        cands.append(PenroseCandidate(float(sb), penrose_integral(marginal, sb), False, sym, (float(sb),)))
    for a, b in plateaus:
        pts = (a, 0.5 * (a + b), b)
        vals = [penrose_integral(marginal, x) for x in pts]
        cands.append(PenroseCandidate(float(pts[1]), float(min(vals)), True, False, tuple(map(float, pts))))
    classical = any((not c.flat) and c.symmetric and c.integral > FOUR_PI2 for c in cands)
    sharp = any(c.integral > 0 for c in cands)
    if classical and not sharp:
        raise AssertionError("classical pass without sharp pass")
    return PenroseReport(tuple(cands), classical, sharp, delta_sup)


def profile_report(profile, direction=None):
    """Penrose report for a profile, including its delta-condition sup."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        dr = check_delta_condition(profile)
    return penrose_report(marginalize(profile, direction), delta_sup=dr.value)
