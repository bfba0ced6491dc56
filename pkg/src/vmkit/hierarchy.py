"""Iterative approximate solutions of relativistic VM near an unstable mu.

The approximation is f_app = sum_k eps^{p+k-1} f_k.  Each g_k = f_k -
eps A_k . grad_v mu solves the linearized VP problem P(g_k) = source_k with
zero data, and A_k solves the wave problem eps^2 A'' - A_xx = eps j(f_k)
with zero data.  Geometry: one space dimension, two velocity dimensions,
Coulomb gauge A = (a1(s), A2(s, x)).

All terms advance in lockstep on one time grid so that no trajectory has
to be stored; sources are injected into the linear Strang step as Duhamel
kicks (trapezoid average of the source at both ends of the step).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (FitResult, NormSpec, ddv, ddx, density, growth_rate_fit, hnm_norm, l2,
                   loglog_slope, moments, poisson_field, sample_profile, sobolev_norm)
from .solvers import LinearVPStepper, _nsteps


class LinkDivergence(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# g <-> f link

@dataclass(frozen=True)
class GtoFLinkConfig:
    """Coupling matrix C_ij = int d_{v_j}(vhat_i) mu dv and its trace c0."""

    eps: float
    C: np.ndarray
    tol: float = 1e-13
    max_iter: int = 60
    horizon_bound: float = 0.1

    @property
    def c0(self):
        return float(np.trace(self.C))


def link_config(profile, grid, eps, **kw):
    mu = sample_profile(profile, grid)[0]
    v = grid.v
    V1, V2 = v[:, None], v[None, :]
    g = np.sqrt(1.0 + eps * eps * (V1**2 + V2**2))
    w = grid.dvol
    C = np.empty((2, 2))
    comps = (V1 + 0 * V2, V2 + 0 * V1)
    for i in range(2):
        for j in range(2):
            d = (1.0 if i == j else 0.0) / g - eps * eps * comps[i] * comps[j] / g**3
            C[i, j] = float(np.sum(d * mu) * w)
    return GtoFLinkConfig(float(eps), C, **kw)


def c0_closed_form(profile, grid, eps):
    """int (d_v + (d_v - 1) eps^2 |v|^2) / gamma^3 mu dv."""
    mu = sample_profile(profile, grid)[0]
    r2 = grid.vnorm2()
    dv = grid.dv
    g = np.sqrt(1.0 + eps * eps * r2)
    return float(np.sum((dv + (dv - 1) * eps * eps * r2) / g**3 * mu) * grid.dvol)


@dataclass
class WaveState:
    """rfft coefficients of one transverse potential component and its time derivative."""

    A: np.ndarray
    dA: np.ndarray
    s: float = 0.0
    steps: int = 0

    @classmethod
    def zeros(cls, grid):
        n = grid.rxi.size
        return cls(np.zeros(n, complex), np.zeros(n, complex))


def _osc(a, da, q, xi, eps, dt):
    """Exact flow of eps^2 a'' + xi^2 a = eps q with q constant over dt."""
    a_new = np.empty_like(a)
    da_new = np.empty_like(da)
    nz = xi != 0
    om = xi[nz] / eps
    c, s = np.cos(om * dt), np.sin(om * dt)
    qq = eps * q[nz] / xi[nz] ** 2
    a_new[nz] = a[nz] * c + da[nz] * s / om + qq * (1 - c)
    da_new[nz] = -a[nz] * om * s + da[nz] * c + qq * om * s
    z = ~nz
    a_new[z] = a[z] + da[z] * dt + q[z] * dt * dt / (2 * eps)
    da_new[z] = da[z] + q[z] * dt / eps
    return a_new, da_new


def advance_wave(state, source, eps, dt, grid, dphi=None):
    """Advance eps^2 A'' - A_xx = eps (j - d_s d_x phi) by one step.

    ``source`` is the current-density x-field (or its rfft when complex);
    ``dphi`` the optional d_s d_x phi field.  The forcing is frozen over the
    step and each Fourier mode is integrated exactly.
    """
    if not eps > 0:
        raise ValueError("the wave problem needs eps > 0")
    if state.steps == 0 and (np.any(state.A != 0) or np.any(state.dA != 0)):
        raise ValueError("the wave problem starts from zero data")
    q = source if np.iscomplexobj(source) else np.fft.rfft(source)
    if dphi is not None:
        q = q - (dphi if np.iscomplexobj(dphi) else np.fft.rfft(dphi))
    a, da = _osc(state.A, state.dA, q, grid.rxi, eps, dt)
    return WaveState(a, da, state.s + dt, state.steps + 1)


@dataclass
class LinkFields:
    """Potentials attached to one f: phi(x), a1, a1', A2(x), A2'(x)."""

    phi: np.ndarray
    a1: float
    da1: float
    A2: np.ndarray
    dA2: np.ndarray

    def scaled(self, c):
        return LinkFields(c * self.phi, c * self.a1, c * self.da1, c * self.A2, c * self.dA2)

    def add(self, o):
        return LinkFields(self.phi + o.phi, self.a1 + o.a1, self.da1 + o.da1, self.A2 + o.A2,
                          self.dA2 + o.dA2)

    @classmethod
    def zeros(cls, nx):
        z = np.zeros(nx)
        return cls(z, 0.0, 0.0, z.copy(), z.copy())


class GtoFLink:
    """Causal solver of f - eps A . grad mu = g with the wave equation for A.

    Mean components follow (eps<A>)'' + C (eps<A>) = <j(g)> exactly; the
    transverse non-mean modes are found by fixed-point iteration on
    j(f) = j(g) - eps C A within each step.
    """

    def __init__(self, grid, cfg, dt):
        self.grid, self.cfg, self.dt = grid, cfg, dt
        self.eps = cfg.eps
        self.wave = WaveState.zeros(grid)
        self.b = np.zeros(2)
        self.db = np.zeros(2)
        self.q = None
        self.jm = None
        self.iterations = []
        self.factors = []
        self.fp_residual = 0.0
        if self.eps > 0:
            w, U = np.linalg.eigh(0.5 * (cfg.C + cfg.C.T))
            if np.any(w <= 0):
                raise ValueError("coupling matrix is not positive definite")
            self._w, self._U = w, U

    def _mean_step(self, F):
        U, w = self._U, self._w
        r = np.sqrt(w)
        b, db, f = U.T @ self.b, U.T @ self.db, U.T @ F
        c, s = np.cos(r * self.dt), np.sin(r * self.dt)
        bn = b * c + db * s / r + f / w * (1 - c)
        dbn = -b * r * s + db * c + f / w * r * s
        self.b, self.db = U @ bn, U @ dbn

    def start(self, jg):
        if self.eps == 0:
            return self.fields()
        self.q = np.fft.rfft(jg[1])
        self.q[0] = 0.0
        self.jm = jg.mean(axis=1)
        return self.fields()

    def step(self, jg):
        eps = self.eps
        if eps == 0:
            return self.fields()
        jm_new = jg.mean(axis=1)
        self._mean_step(0.5 * (self.jm + jm_new))
        self.jm = jm_new
        qg = np.fft.rfft(jg[1])
        qg[0] = 0.0
        c22 = self.cfg.C[1, 1]
        a_old = self.wave
        guess = a_old.A
        prev_delta = None
        for it in range(1, self.cfg.max_iter + 1):
            q_new = qg - eps * c22 * guess
            q_new[0] = 0.0
            nw = advance_wave(a_old, 0.5 * (self.q + q_new), eps, self.dt, self.grid)
            delta = float(np.max(np.abs(nw.A - guess)))
            scale = float(np.max(np.abs(nw.A))) + 1e-300
            guess = nw.A
            if prev_delta is not None and prev_delta > 0:
                self.factors.append(delta / prev_delta)
            prev_delta = delta
            if delta <= self.cfg.tol * scale or delta == 0.0:
                break
        else:
            raise LinkDivergence(f"fixed point stalled (increment {delta:.2e}); eps*T too large?")
        q_fin = qg - eps * c22 * nw.A
        q_fin[0] = 0.0
        chk = advance_wave(a_old, 0.5 * (self.q + q_fin), eps, self.dt, self.grid)
        self.fp_residual = max(self.fp_residual, float(np.max(np.abs(chk.A - nw.A))))
        self.iterations.append(it)
        self.wave = nw
        self.q = q_fin
        return self.fields()

    def fields(self, phi=None):
        g = self.grid
        if phi is None:
            phi = np.zeros(g.Nx)
        if self.eps == 0:
            return LinkFields(phi, 0.0, 0.0, np.zeros(g.Nx), np.zeros(g.Nx))
        A = self.wave.A.copy()
        dA = self.wave.dA.copy()
        A[0] = 0.0
        dA[0] = 0.0
        A2 = np.fft.irfft(A, g.Nx) + self.b[1] / self.eps
        dA2 = np.fft.irfft(dA, g.Nx) + self.db[1] / self.eps
        return LinkFields(phi, self.b[0] / self.eps, self.db[0] / self.eps, A2, dA2)


def _mu_derivs(profile, grid):
    mu, (d1, d2) = sample_profile(profile, grid)
    return mu, d1, d2


def apply_link(g, flds, eps, d1, d2):
    """f = g + eps (a1 d_v1 mu + A2(x) d_v2 mu)."""
    if eps == 0:
        return g.copy()
    return g + eps * (flds.a1 * d1[None] + flds.A2[:, None, None] * d2[None])


@dataclass
class LinkResult:
    f: list
    A: np.ndarray
    dA: np.ndarray
    iterations: list
    ratio_lower: float
    ratio_upper: float
    mean_A_max: float
    contraction: float


def solve_g_to_f(g_traj, profile, grid, eps, cfg=None, dt=None, times=None):
    """Map a stored g trajectory (uniform times) to (f, A).

    Returns the f snapshots, A as (T, 2, Nx) with A[:, 0] the uniform
    component, the measured ratios ||f||/||g|| and the fixed-point history.
    """
    g_traj = [np.asarray(g) for g in g_traj]
    if times is None:
        if dt is None:
            raise ValueError("give dt or times")
        times = dt * np.arange(len(g_traj))
    times = np.asarray(times, float)
    dts = np.diff(times)
    if dts.size and np.ptp(dts) > 1e-12 * max(1.0, dts[0]):
        raise ValueError("g trajectory must be sampled uniformly")
    dt = float(dts[0]) if dts.size else (dt or 1.0)
    horizon = float(times[-1] - times[0])
    cfg = link_config(profile, grid, eps) if cfg is None else cfg
    if eps * horizon > cfg.horizon_bound + 1e-12:
        raise ValueError(f"eps*T = {eps * horizon:.3g} exceeds {cfg.horizon_bound}")
    tot = abs(float(np.sum(g_traj[0]) * grid.dx * grid.dvol))
    if tot > 1e-10 * max(1.0, float(np.sum(np.abs(g_traj[0])) * grid.dx * grid.dvol)):
        raise ValueError("g must have zero total mass")
    _, d1, d2 = _mu_derivs(profile, grid)
    link = GtoFLink(grid, cfg, dt)
    fs, As, dAs = [], [], []
    ratios = []
    mean_max = 0.0
    for i, g in enumerate(g_traj):
        jg = moments(g, grid, eps)[1]
        fl = link.start(jg) if i == 0 else link.step(jg)
        f = apply_link(g, fl, eps, d1, d2)
        fs.append(f)
        As.append(np.stack([np.full(grid.Nx, fl.a1), fl.A2]))
        dAs.append(np.stack([np.full(grid.Nx, fl.da1), fl.dA2]))
        mean_max = max(mean_max, abs(fl.a1), abs(float(fl.A2.mean())))
        ng = l2(g, grid)
        if ng > 0:
            ratios.append(l2(f, grid) / ng)
    fac = float(np.median(link.factors)) if link.factors else 0.0
    return LinkResult(fs, np.array(As), np.array(dAs), link.iterations,
                      min(ratios) if ratios else 1.0, max(ratios) if ratios else 1.0, mean_max, fac)


# ---------------------------------------------------------------------------
# sources

class HierarchyOperators:
    """S~, T and Q on the grid for a fixed eps and equilibrium."""

    def __init__(self, profile, grid, eps):
        self.grid, self.eps = grid, eps
        self.mu, self.d1, self.d2 = _mu_derivs(profile, grid)
        self.u1, self.u2 = grid.vhat(eps)
        r2 = grid.vnorm2()
        gam = np.sqrt(1.0 + eps * eps * r2)
        self.tfac = -(r2 / (gam * (1.0 + gam))) * grid.v[:, None]
        self._s_shape = self.u2 * self.d1

    def phi(self, g):
        rho = density(g, self.grid)
        return poisson_field(rho - rho.mean(), self.grid)[0]

    def s_tilde(self, flds):
        """(vhat . grad) A . grad mu + (vhat x curl A) . grad mu = dA2/dx vhat2 d_v1 mu."""
        B3 = ddx(flds.A2, self.grid)
        return B3[:, None, None] * self._s_shape[None]

    def t_op(self, f):
        return self.tfac[None] * ddx(f, self.grid, axis=0)

    def grad_v(self, g):
        return ddv(g, self.grid, 1), ddv(g, self.grid, 2)

    def force(self, flds):
        """Components of E + eps vhat x B generated by the potentials."""
        e = self.eps
        E1 = -ddx(flds.phi, self.grid) - e * flds.da1
        E2 = -e * flds.dA2
        B3 = ddx(flds.A2, self.grid)
        F1 = E1[:, None, None] + e * self.u2[None] * B3[:, None, None]
        F2 = E2[:, None, None] - e * self.u1[None] * B3[:, None, None]
        return F1, F2

    def q_op(self, flds, g, grad=None):
        if grad is None:
            grad = self.grad_v(g)
        F1, F2 = self.force(flds)
        return F1 * grad[0] + F2 * grad[1]

    def p_op(self, g, dg_ds):
        """P g = d_s g + v1 d_x g + E(g) d_v1 mu (nonrelativistic linearized VP)."""
        E = poisson_field(density(g, self.grid) - density(g, self.grid).mean(), self.grid)[1]
        return dg_ds + self.grid.v[None, :, None] * ddx(g, self.grid) + E[:, None, None] * self.d1[None]

    def fields_from(self, g, link_fields):
        lf = link_fields
        return LinkFields(self.phi(g), lf.a1, lf.da1, lf.A2, lf.dA2)


def hierarchy_sources(profile, grid, eps):
    """Evaluators (S_tilde(fields), T(f), Q(fields, g)) at fixed eps."""
    ops = HierarchyOperators(profile, grid, eps)
    return ops.s_tilde, ops.t_op, ops.q_op


# ---------------------------------------------------------------------------
# hierarchy

@dataclass
class HierarchyTerm:
    k: int
    times: np.ndarray
    norm_f: np.ndarray
    norm_g: np.ndarray
    structurally_zero: bool
    rate: FitResult | None = None


@dataclass
class ApproxSolution:
    p: int
    N: int
    eps: float
    dt: float
    horizon: float
    terms: list
    samples: list = field(default_factory=list)
    probes: dict = field(default_factory=dict)
    link_iterations: int = 0
    link_contraction: float = 0.0
    link_fp_residual: float = 0.0
    mean_A_max: float = 0.0
    meta: dict = field(default_factory=dict)


_FD5 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0


class HierarchyBuilder:
    """Lockstep construction of g_k, f_k, potentials for k = 1..N."""

    def __init__(self, mode, profile, p, N, eps, dt, horizon, transverse=0.0, cfg=None,
                 check_horizon=True):
        if p < 2:
            raise ValueError("p must be at least 2")
        if not 1 <= N <= 4:
            raise ValueError("N must lie in 1..4")
        if eps < 0:
            raise ValueError("eps must be nonnegative")
        grid = mode.grid
        if grid.dv != 2:
            raise ValueError("the hierarchy runs on 1D2V grids")
        if check_horizon and eps * horizon > 0.1 + 1e-12:
            raise ValueError(f"eps*T = {eps * horizon:.3g} exceeds the bound 0.1")
        self.mode, self.grid, self.p, self.N, self.eps, self.dt = mode, grid, p, N, eps, dt
        self.nsteps = _nsteps(dt, horizon)
        self.horizon = horizon
        self.ops = HierarchyOperators(profile, grid, eps)
        self.cfg = link_config(profile, grid, eps) if cfg is None else cfg
        self.stepper = LinearVPStepper(grid, self.ops.d1, dt)
        self.transverse = float(transverse)
        if self.transverse:
            k0 = mode.root.k0
            h = (grid.v[None, :] * self.ops.mu).astype(complex)
            base = np.exp(1j * k0 * grid.x)[:, None, None] * h[None]
            self._tnorm = hnm_norm(base, grid, *mode.norm)
            self._th = self.transverse * h / self._tnorm
        self.s = 0.0
        self.n = 0
        self.links = [GtoFLink(grid, self.cfg, dt) for _ in range(N)]
        self.g = [None] * N
        self.f = [None] * N
        self.fl = [None] * N
        self.src = [None] * N
        self.src_max = [0.0] * N
        self.g1_max = 0.0
        self._gradcache = {}
        # s = 0
        g1 = self.g1(0.0)
        self._set_term(0, g1, self.links[0].start(moments(g1, grid, eps)[1]))
        for k in range(1, N):
            z = np.zeros(grid.shape)
            self._set_term(k, z, self.links[k].start(np.zeros((2, grid.Nx))))
        for k in range(1, N):
            self.src[k] = self._source(k)

    # term 1 -----------------------------------------------------------
    def g1(self, s):
        out = self.mode.g1(s)
        if self.transverse:
            k0, x, v1 = self.mode.root.k0, self.grid.x, self.grid.v
            ph = np.exp(1j * k0 * (x[:, None] - v1[None, :] * s))
            out = out + (ph[:, :, None] * self._th[None]).real
        return out

    def dg1(self, s):
        out = self.mode.dg1(s)
        if self.transverse:
            k0, x, v1 = self.mode.root.k0, self.grid.x, self.grid.v
            ph = -1j * k0 * v1[None, :] * np.exp(1j * k0 * (x[:, None] - v1[None, :] * s))
            out = out + (ph[:, :, None] * self._th[None]).real
        return out

    # ------------------------------------------------------------------
    def structurally_zero(self, k, rtol=1e-12):
        """Term k (0-based) whose sources vanished to roundoff for the whole run."""
        return k > 0 and self.src_max[k] <= rtol * self.g1_max

    def _set_term(self, k, g, lf):
        if k == 0:
            self.g1_max = max(self.g1_max, float(np.max(np.abs(g))))
        self.g[k] = g
        self.fl[k] = self.ops.fields_from(g, lf)
        self.f[k] = apply_link(g, lf, self.eps, self.ops.d1, self.ops.d2)
        self._gradcache.pop(k, None)

    def _grad(self, k):
        if k not in self._gradcache:
            self._gradcache[k] = self.ops.grad_v(self.f[k])
        return self._gradcache[k]

    def _source(self, k):
        """Source of P(g_{k+1}) (0-based k): -S~(f_k) - T(f_{k-1}) - sum Q."""
        K = k + 1  # 1-based index of the term being driven
        out = np.zeros(self.grid.shape)
        used = False
        if K - 1 >= 1:
            out -= self.ops.s_tilde(self.fl[K - 2])
            used = True
        if K - 2 >= 1:
            out -= self.ops.t_op(self.f[K - 3])
            used = True
        for ell in range(1, K):
            m = K + 1 - self.p - ell
            if m >= 1:
                out -= self.ops.q_op(self.fl[ell - 1], self.f[m - 1], self._grad(m - 1))
                used = True
        if used:
            self.src_max[k] = max(self.src_max[k], float(np.max(np.abs(out))))
        return out

    def advance(self):
        dt, eps = self.dt, self.eps
        self.n += 1
        self.s = self.n * dt
        g1 = self.g1(self.s)
        self._set_term(0, g1, self.links[0].step(moments(g1, self.grid, eps)[1]))
        for k in range(1, self.N):
            new = self._source(k)
            g = self.stepper.step(self.g[k], 0.5 * (self.src[k] + new))
            self.src[k] = new
            self._set_term(k, g, self.links[k].step(moments(g, self.grid, eps)[1]))

    def coef(self, k):
        return self.eps ** (self.p + k)

    def f_app(self):
        return sum(self.coef(k) * self.f[k] for k in range(self.N))

    def g_app(self):
        return sum(self.coef(k) * self.g[k] for k in range(self.N))

    def fields_app(self):
        out = LinkFields.zeros(self.grid.Nx)
        for k in range(self.N):
            out = out.add(self.fl[k].scaled(self.coef(k)))
        return out

    def em_fields(self, flds=None):
        """(E1, E2, B3) of the assembled potentials."""
        flds = self.fields_app() if flds is None else flds
        E1 = -ddx(flds.phi, self.grid) - self.eps * flds.da1
        E2 = -self.eps * flds.dA2
        B3 = ddx(flds.A2, self.grid)
        return E1, E2, B3

    def run(self, diag_every=1, sample_every=None, probes=(), callback=None, norm=None):
        """Advance to the horizon; returns an ApproxSolution."""
        grid = self.grid
        probe_steps = {}
        for sp in probes:
            n = int(round(sp / self.dt))
            if n < 2 or n > self.nsteps - 2:
                raise ValueError(f"probe time {sp} needs two steps of margin inside the horizon")
            probe_steps[n] = sp
        want = set()
        for n in probe_steps:
            want.update(range(n - 2, n + 3))
        stash = {}
        times, nf, ng = [], [[] for _ in range(self.N)], [[] for _ in range(self.N)]
        samples = []
        nspec = norm

        def measure():
            times.append(self.s)
            for k in range(self.N):
                if nspec is None:
                    nf[k].append(l2(self.f[k], grid))
                    ng[k].append(l2(self.g[k], grid))
                else:
                    nf[k].append(sobolev_norm(self.f[k], grid, nspec))
                    ng[k].append(sobolev_norm(self.g[k], grid, nspec))

        def keep():
            if self.n in want:
                stash[self.n] = {"g": [g.copy() for g in self.g]}
            if self.n in probe_steps:
                stash[self.n].update({"f": [f.copy() for f in self.f],
                                      "fl": list(self.fl), "s": self.s})
            if sample_every and self.n % sample_every == 0:
                E1, E2, B3 = self.em_fields()
                samples.append({"s": self.s, "f_app": self.f_app(), "E": np.stack([E1, E2]), "B": B3})
            if self.n % diag_every == 0 or self.n == self.nsteps:
                measure()
                if callback is not None:
                    callback(self)

        keep()
        while self.n < self.nsteps:
            self.advance()
            keep()
        probes_out = {}
        for n, sp in probe_steps.items():
            gs = [stash[n + j]["g"] for j in range(-2, 3)]
            dg = [sum(_FD5[j] * gs[j][k] for j in range(5)) / self.dt for k in range(self.N)]
            d = stash[n]
            probes_out[sp] = {"s": d["s"], "g": d["g"], "f": d["f"], "fl": d["fl"], "dg": dg}
        terms = []
        T = np.array(times)
        for k in range(self.N):
            zero = self.structurally_zero(k)
            term = HierarchyTerm(k + 1, T, np.array(nf[k]), np.array(ng[k]), zero)
            terms.append(term)
        its = [i for ln in self.links for i in ln.iterations]
        fac = [x for ln in self.links for x in ln.factors if np.isfinite(x)]
        meanA = max(max(abs(ln.b[0]), abs(ln.b[1])) for ln in self.links) / self.eps if self.eps else 0.0
        return ApproxSolution(self.p, self.N, self.eps, self.dt, self.horizon, terms, samples,
                              probes_out, max(its) if its else 0,
                              float(np.median(fac)) if fac else 0.0,
                              max(ln.fp_residual for ln in self.links), meanA,
                              {"transverse": self.transverse, "rate": self.mode.rate,
                               "structurally_zero": [t.k for t in terms if t.structurally_zero]})


def build_hierarchy(mode, profile, p, N, eps, horizon, dt=None, transverse=0.0, probes=(),
                    diag_every=1, sample_every=None, fit_window=0.5):
    """Construct the N-term approximation and fit the growth rate of each ||f_k||."""
    dt = min(0.01, horizon / 100) if dt is None else dt
    hb = HierarchyBuilder(mode, profile, p, N, eps, dt, horizon, transverse)
    sol = hb.run(diag_every=diag_every, sample_every=sample_every, probes=probes)
    sol.meta["builder"] = hb
    lam = mode.lam
    for t in sol.terms:
        if t.structurally_zero or np.all(t.norm_f == 0):
            continue
        t.rate = term_rate(t.times, t.norm_f, lam, fit_window)
    return sol


def term_rate(times, series, lam, window=0.5):
    """Tail growth rate; complex lambda samples at s = 2 pi j / |Im lambda|."""
    if abs(lam.imag) > 1e-8:
        per = 2 * np.pi / abs(lam.imag)
        js = np.arange(1, int(times[-1] / per) + 1)
        idx = np.unique([int(np.argmin(np.abs(times - j * per))) for j in js])
        if idx.size >= 10:
            return growth_rate_fit(times[idx], series[idx], window)
    return growth_rate_fit(times, series, window)


# ---------------------------------------------------------------------------
# residual

def residual_parts(sol, s):
    """Pieces of R(f_app) = P[G] + eps S~ + eps^2 T + Q at a stored probe time."""
    hb = sol.meta["builder"]
    ops, eps, p = hb.ops, sol.eps, sol.p
    pr = sol.probes[s]
    c = [eps ** (p + k) for k in range(sol.N)]
    G = sum(c[k] * pr["g"][k] for k in range(sol.N))
    dG = c[0] * hb.dg1(pr["s"]) + sum(c[k] * pr["dg"][k] for k in range(1, sol.N))
    F = sum(c[k] * pr["f"][k] for k in range(sol.N))
    fl = LinkFields.zeros(hb.grid.Nx)
    for k in range(sol.N):
        fl = fl.add(pr["fl"][k].scaled(c[k]))
    return {"P": ops.p_op(G, dG), "S": eps * ops.s_tilde(fl), "T": eps * eps * ops.t_op(F),
            "Q": ops.q_op(fl, F)}


def residual(sol, s, norm=None):
    parts = residual_parts(sol, s)
    R = parts["P"] + parts["S"] + parts["T"] + parts["Q"]
    grid = sol.meta["builder"].grid
    return l2(R, grid) if norm is None else sobolev_norm(R, grid, norm)


@dataclass
class SlopeReport:
    eps: np.ndarray
    values: np.ndarray
    slope: float
    r2: float
    flagged: bool


def residual_scaling(solutions, norm=None):
    """Fit log sup_s ||R(f_app)(s)|| against log eps over an eps list."""
    eps = np.array([s.eps for s in solutions])
    if eps.size < 4:
        raise ValueError("need at least four eps values")
    vals = np.array([max(residual(sol, sp, norm) for sp in sol.probes) for sol in solutions])
    slope, r2 = loglog_slope(eps, vals)
    return SlopeReport(eps, vals, slope, r2, r2 < 0.98)


__all__ = [
    "GtoFLinkConfig", "link_config", "c0_closed_form", "WaveState", "advance_wave", "GtoFLink",
    "LinkFields", "solve_g_to_f", "hierarchy_sources", "HierarchyOperators", "HierarchyBuilder",
    "HierarchyTerm", "ApproxSolution", "build_hierarchy", "residual", "residual_parts",
    "residual_scaling", "SlopeReport", "term_rate",
]
