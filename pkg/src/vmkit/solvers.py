"""Splitting integrators for linearized VP, nonlinear VP and relativistic VM.

All transports are exact Fourier shifts, so mass is conserved to roundoff
and the sub-flows are reversible.  The VM integrator is written for a
generic frame so that the classical (speed of light 1/eps) and the
quasineutral (Debye length eps) scalings share one code path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (KineticState, NormSpec, Series, density, l2, mean_zero_check, moments,
                   poisson_field, sample_profile, sobolev_norm)


class NumericalInstability(RuntimeError):
    pass


def default_dt(grid):
    return min(0.05, 0.2 * grid.dx / grid.vmax)


def _check_dt(dt, grid, horizon):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt * grid.vmax > 0.5 * grid.M:
        raise ValueError(f"dt={dt} moves the fastest particle more than half the box per step")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")


def _nsteps(dt, horizon):
    n = int(round(horizon / dt))
    if abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"horizon {horizon} is not a multiple of dt {dt}")
    return n


def _sinc1(theta):
    """(e^{i theta} - 1)/(i theta), stable at theta = 0."""
    return np.sinc(theta / np.pi) + 1j * np.sin(theta / 2) * np.sinc(theta / (2 * np.pi))


@dataclass
class Trajectory:
    """Diagnostics sampled along a run, optional snapshots and metadata."""

    times: np.ndarray
    diagnostics: dict
    states: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    final: KineticState | None = None

    def __getitem__(self, key):
        return self.diagnostics[key]

    def columns(self):
        return ["s"] + [k for k in self.diagnostics if k != "s"]


DIAG_KEYS = ("mass", "L2", "Hneg", "rho", "j", "E", "B", "gauss", "energy")


class _Diagnostics:
    def __init__(self, grid, mu, eps, keys, s_prime, ampere=1.0):
        self.grid, self.mu, self.eps = grid, mu, eps
        self.keys = tuple(keys)
        self.spec = NormSpec(order=-s_prime)
        self.ampere = ampere
        self.rows = Series()
        self.g = np.sqrt(1.0 + eps * eps * grid.vnorm2())

    def record(self, st, E, B=None, rho=None, j=None):
        g = self.grid
        if rho is None:
            rho, j = moments(st.f, g, self.eps)
        row = {"s": st.s}
        d = st.f - self.mu if self.mu is not None else st.f
        E1 = E if g.dv == 1 else E[0]
        for k in self.keys:
            if k == "mass":
                row[k] = float(rho.sum() * g.dx)
            elif k == "L2":
                row[k] = l2(d, g)
            elif k == "Hneg":
                import warnings
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    row[k] = sobolev_norm(d, g, self.spec)
            elif k == "rho":
                row[k] = l2(rho - 1.0, g)
            elif k == "j":
                row[k] = l2(j, g)
            elif k == "E":
                row[k] = l2(E, g)
            elif k == "B":
                row[k] = 0.0 if B is None else l2(B, g)
            elif k == "gauss":
                r = rho - 1.0 if self.mu is not None else rho
                row[k] = gauss_residual(E1, r, g, self.ampere)
            elif k == "energy":
                kin = np.sum(st.f * (g.vnorm2() / (1.0 + self.g))) * g.dx * g.dvol
                fe = 0.5 * np.sum(np.asarray(E) ** 2) * g.dx / self.ampere
                if B is not None:
                    fe += 0.5 * np.sum(B**2) * g.dx
                row[k] = float(kin + fe)
        self.rows.add(**row)

    def trajectory(self, meta, states, final):
        cols = {k: self.rows.array(k) for k in self.rows.columns}
        return Trajectory(cols.pop("s"), cols, states, meta, final)


def gauss_residual(E1, rho_minus_one, grid, ampere=1.0):
    """L2 norm of dE1/dx - ampere * (rho - 1), spectral derivative."""
    eh = np.fft.rfft(E1)
    rh = np.fft.rfft(rho_minus_one)
    xi = grid.rxi
    res = 1j * xi * eh - ampere * rh
    res[0] = 0.0
    if grid.Nx % 2 == 0:
        res[-1] = 0.0
    return l2(np.fft.irfft(res, grid.Nx), grid)


# ---------------------------------------------------------------------------
# linearized Vlasov-Poisson

class LinearVPStepper:
    """Strang step for d_s g = -v1 d_x g - E(g) d_v1 mu + S."""

    def __init__(self, grid, dmu1, dt, field=True):
        self.grid, self.dt, self.field = grid, dt, field
        self.dmu = dmu1
        v1 = grid.v if grid.dv == 1 else grid.v[:, None]
        ph = np.exp(-1j * grid.rxi[:, None] * v1.reshape(1, -1) * (0.5 * dt))
        self.half = ph.reshape((grid.rxi.size,) + (grid.Nv,) + (1,) * (grid.dv - 1))

    def _transport(self, g):
        n = self.grid.Nx
        return np.fft.irfft(np.fft.rfft(g, axis=0) * self.half, n, axis=0)

    def _efield(self, g):
        rho = density(g, self.grid)
        return poisson_field(rho - rho.mean(), self.grid)[1]

    def step(self, g, source=None):
        dt = self.dt
        g = self._transport(g)
        if self.field:
            E = self._efield(g)
            kick = dt * E
            if source is not None:
                kick = kick + 0.5 * dt * dt * self._efield(source)
            g = g - kick.reshape((-1,) + (1,) * self.grid.dv) * self.dmu[None]
        if source is not None:
            g = g + dt * source
        return self._transport(g)


def evolve_linear_vp(g0, mu, grid, dt=None, horizon=10.0, source=None, field=True,
                     diag_every=1, store_every=None, s_prime=1.0):
    """Linearized VP around ``mu`` from the mean-zero perturbation ``g0``.

    ``source(s)`` (optional) is sampled at mid-steps and injected as a
    Duhamel kick.  Diagnostics: L2 and H^{-s'} of g, and its charge norm.
    """
    dt = default_dt(grid) if dt is None else dt
    _check_dt(dt, grid, horizon)
    g = np.array(g0.f if isinstance(g0, KineticState) else g0, dtype=float)
    if g.shape != grid.shape:
        raise ValueError("g0 does not match the grid")
    mean_zero_check(g, grid)
    _, grads = sample_profile(mu, grid)
    st = LinearVPStepper(grid, grads[0], dt, field)
    n = _nsteps(dt, horizon)
    diag = _Diagnostics(grid, None, 0.0, ("L2", "Hneg", "rho"), s_prime)
    state = KineticState(g, np.zeros(grid.Nx) if grid.dv == 1 else np.zeros((2, grid.Nx)), grid)
    states = []

    def snap(s):
        state.f, state.s = g, s
        rho = density(g, grid)
        diag.record(state, np.zeros(grid.Nx), rho=rho + 1.0, j=None)
        if store_every and (len(diag.rows) - 1) % store_every == 0:
            states.append(state.copy())

    snap(0.0)
    for i in range(n):
        src = None if source is None else source((i + 0.5) * dt)
        g = st.step(g, src)
        if (i + 1) % diag_every == 0 or i == n - 1:
            snap((i + 1) * dt)
    state.f = g
    return diag.trajectory({"solver": "linear-vp", "dt": dt, "splitting": "strang", "field": field},
                           states, state.copy())


# ---------------------------------------------------------------------------
# nonlinear Vlasov-Poisson

class VPStepper:
    """Strang: x half-shift, v-shift by E dt, x half-shift (force along v1)."""

    def __init__(self, grid, dt):
        self.grid, self.dt = grid, dt
        v1 = grid.v if grid.dv == 1 else grid.v[:, None]
        ph = np.exp(-1j * grid.rxi[:, None] * v1.reshape(1, -1) * (0.5 * dt))
        self.half = ph.reshape((grid.rxi.size, grid.Nv) + (1,) * (grid.dv - 1))
        self.kap = grid.rkappa

    def _x(self, f):
        return np.fft.irfft(np.fft.rfft(f, axis=0) * self.half, self.grid.Nx, axis=0)

    def field(self, f):
        rho = density(f, self.grid)
        return poisson_field(rho - 1.0, self.grid)[1], rho

    def _v(self, f, E):
        fh = np.fft.rfft(f, axis=1)
        sh = (-1, self.kap.size) + (1,) * (self.grid.dv - 1)
        fh *= np.exp(-1j * self.kap[None, :] * (E * self.dt)[:, None]).reshape(sh)
        return np.fft.irfft(fh, self.grid.Nv, axis=1)

    def step(self, f):
        f = self._x(f)
        E, _ = self.field(f)
        f = self._v(f, E)
        return self._x(f)


def _guard(f):
    mx = float(np.max(f))
    if not np.isfinite(mx) or float(np.min(f)) < -0.1 * mx:
        raise NumericalInstability("distribution went strongly negative")


def evolve_nonlinear_vp(f0, dt=None, horizon=10.0, mu=None, diag_every=1, store_every=None,
                        keys=DIAG_KEYS, s_prime=1.0, stop=None, callback=None):
    """Nonlinear VP from the state ``f0`` (dv = 1, or dv = 2 with force on v1)."""
    grid = f0.grid
    dt = default_dt(grid) if dt is None else dt
    _check_dt(dt, grid, horizon)
    f = np.array(f0.f, dtype=float)
    mass = float(f.sum() * grid.dx * grid.dvol)
    if abs(mass / grid.M - 1.0) > 1e-8:
        raise ValueError(f"initial mass per unit length {mass / grid.M:.12f} is not 1")
    _guard(f)
    st = VPStepper(grid, dt)
    mu_arr = sample_profile(mu, grid)[0] if mu is not None else None
    keys = tuple(k for k in keys if mu_arr is not None or k not in ("L2", "Hneg"))
    diag = _Diagnostics(grid, mu_arr, 0.0, keys, s_prime)
    state = KineticState(f, None, grid, None, f0.s, 0.0)
    states = []
    n = _nsteps(dt, horizon)

    def efield(f):
        E, rho = st.field(f)
        E = E if grid.dv == 1 else np.stack([E, np.zeros_like(E)])
        return E, rho

    def snap():
        E, rho = efield(state.f)
        state.E = E
        diag.record(state, E, None if grid.dv == 1 else np.zeros(grid.Nx))
        if store_every and (len(diag.rows) - 1) % store_every == 0:
            states.append(state.copy())

    snap()
    for i in range(n):
        state.f = st.step(state.f)
        state.s = f0.s + (i + 1) * dt
        if (i + 1) % diag_every == 0 or i == n - 1:
            _guard(state.f)
            snap()
            if callback is not None:
                callback(state)
            if stop is not None and stop(state, diag.rows):
                break
    return diag.trajectory({"solver": "vp", "dt": dt, "splitting": "strang"}, states, state)


# ---------------------------------------------------------------------------
# relativistic Vlasov-Maxwell, 1D2V

@dataclass(frozen=True)
class VMFrame:
    """Coefficients of the reduced Maxwell system in a given scaling.

    dE1/dt = -ampere j1,  dE2/dt = -wave_beta dB/dx - ampere j2,
    dB/dt = -wave_alpha dE2/dx,  force E + lorentz * vhat x B,
    Gauss dE1/dx = ampere (rho - 1).
    """

    eps: float
    ampere: float
    wave_alpha: float
    wave_beta: float
    lorentz: float
    name: str

    @classmethod
    def classical(cls, eps):
        if not eps > 0:
            raise ValueError("eps must be positive for Vlasov-Maxwell")
        return cls(eps, 1.0, 1.0 / eps, 1.0 / eps, eps, "classical")

    @classmethod
    def quasineutral(cls, eps):
        if not eps > 0:
            raise ValueError("eps must be positive for Vlasov-Maxwell")
        return cls(eps, 1.0 / eps**2, 1.0, 1.0 / eps**2, 1.0, "quasineutral")


class VMStepper:
    """Strang composition wave/mag/elec | transport | elec/mag/wave."""

    def __init__(self, grid, frame, dt):
        if grid.dv != 2:
            raise ValueError("Vlasov-Maxwell runs need dv = 2")
        self.grid, self.fr, self.dt = grid, frame, dt
        self.u1, self.u2 = grid.vhat(frame.eps)
        self.xi = grid.rxi
        self.kap = grid.kappa
        self.rkap = grid.rkappa
        xi = self.xi[:, None, None]
        self.phase = np.exp(-1j * xi * self.u1[None] * dt)
        self.phi1 = _sinc1(-xi * self.u1[None] * dt) * dt
        self.vmax_hat = float(np.max(np.sqrt(self.u1**2 + self.u2**2)))

    # (E2, B) exact per-mode rotation
    def wave(self, E2, B, tau):
        fr, n = self.fr, self.grid.Nx
        eh, bh = np.fft.rfft(E2), np.fft.rfft(B)
        xi = self.xi
        om = np.abs(xi) * math.sqrt(fr.wave_alpha * fr.wave_beta)
        c, s = np.cos(om * tau), np.sin(om * tau)
        with np.errstate(invalid="ignore", divide="ignore"):
            sq = np.where(om > 0, s / np.where(om > 0, om, 1.0), tau)
        e_new = eh * c - 1j * xi * fr.wave_beta * bh * sq
        b_new = bh * c - 1j * xi * fr.wave_alpha * eh * sq
        return np.fft.irfft(e_new, n), np.fft.irfft(b_new, n)

    def electric(self, f, E, tau):
        fh = np.fft.rfftn(f, axes=(1, 2))
        a = E[0][:, None, None] * self.kap[None, :, None] + E[1][:, None, None] * self.rkap[None, None, :]
        fh *= np.exp(-1j * a * tau)
        return np.fft.irfftn(fh, s=f.shape[1:], axes=(1, 2))

    def _mag_rhs(self, f, cB):
        g = self.grid
        k1 = self.rkap.copy()
        k1[-1] = 0.0
        a = np.fft.irfft(np.fft.rfft(self.u2[None] * f, axis=1) * (1j * k1)[None, :, None], g.Nv, axis=1)
        b = np.fft.irfft(np.fft.rfft(self.u1[None] * f, axis=2) * (1j * k1)[None, None, :], g.Nv, axis=2)
        return -cB[:, None, None] * (a - b)

    def magnetic(self, f, B, tau):
        cB = self.fr.lorentz * B
        kmax = float(np.max(np.abs(self.kap)))
        rate = float(np.max(np.abs(cB))) * self.vmax_hat * kmax
        if rate * tau < 1e-15:
            return f
        m = max(1, int(math.ceil(rate * tau / 1.5)))
        h = tau / m
        for _ in range(m):
            k1 = self._mag_rhs(f, cB)
            k2 = self._mag_rhs(f + 0.5 * h * k1, cB)
            k3 = self._mag_rhs(f + 0.5 * h * k2, cB)
            k4 = self._mag_rhs(f + h * k3, cB)
            f = f + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return f

    def transport(self, f, E):
        g, fr = self.grid, self.fr
        fh = np.fft.rfft(f, axis=0)
        w = g.dvol
        rho_old = fh.sum(axis=(1, 2)) * w
        j2int = np.einsum("ijk,ijk->i", fh, self.u2[None] * self.phi1) * w
        fh = fh * self.phase
        rho_new = fh.sum(axis=(1, 2)) * w
        e1h = np.fft.rfft(E[0])
        e2h = np.fft.rfft(E[1])
        xi = self.xi
        nz = xi != 0
        e1h[nz] += fr.ampere * (rho_new[nz] - rho_old[nz]) / (1j * xi[nz])
        j1mean = float(np.sum(self.u1 * f.sum(axis=0))) * w / g.Nx
        e1h[0] -= fr.ampere * self.dt * j1mean * g.Nx
        e2h -= fr.ampere * j2int
        f = np.fft.irfft(fh, g.Nx, axis=0)
        return f, np.stack([np.fft.irfft(e1h, g.Nx), np.fft.irfft(e2h, g.Nx)])

    def step(self, f, E, B):
        h = 0.5 * self.dt
        E2, B = self.wave(E[1], B, h)
        E = np.stack([E[0], E2])
        f = self.magnetic(f, B, h)
        f = self.electric(f, E, h)
        f, E = self.transport(f, E)
        f = self.electric(f, E, h)
        f = self.magnetic(f, B, h)
        E2, B = self.wave(E[1], B, h)
        return f, np.stack([E[0], E2]), B


def gauss_e1(f, grid, ampere=1.0):
    """E1 with zero mean solving dE1/dx = ampere (rho - 1)."""
    rho = density(f, grid)
    return ampere * poisson_field(rho - rho.mean(), grid)[1]


def vm_state(grid, f, eps, frame="classical", s=0.0):
    """State with E1 from Gauss's law and E2 = B = 0."""
    fr = VMFrame.classical(eps) if frame == "classical" else VMFrame.quasineutral(eps)
    E = np.stack([gauss_e1(f, grid, fr.ampere), np.zeros(grid.Nx)])
    return KineticState(np.array(f, dtype=float), E, grid, np.zeros(grid.Nx), s, eps)


def evolve_nonlinear_vm(f0, eps=None, dt=None, horizon=10.0, mu=None, frame="classical",
                        diag_every=1, store_every=None, keys=DIAG_KEYS, s_prime=1.0,
                        stop=None, callback=None, gauss_tol=1e-8):
    """Relativistic VM (1D2V) from ``f0``; eps = 0 dispatches to Vlasov-Poisson."""
    grid = f0.grid
    eps = f0.eps if eps is None else eps
    if grid.dv != 2:
        raise ValueError("Vlasov-Maxwell runs need dv = 2")
    if eps == 0:
        if (f0.B is not None and np.any(f0.B != 0)) or np.any(np.asarray(f0.E)[1] != 0):
            raise ValueError("eps = 0 needs vanishing transverse fields E2 and B")
        tr = evolve_nonlinear_vp(f0, dt, horizon, mu, diag_every, store_every, keys, s_prime, stop, callback)
        tr.meta["dispatched"] = "vp"
        return tr
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    fr = VMFrame.classical(eps) if frame == "classical" else VMFrame.quasineutral(eps)
    dt = default_dt(grid) if dt is None else dt
    _check_dt(dt, grid, horizon)
    st = VMStepper(grid, fr, dt)
    state = f0.copy()
    state.eps = eps
    if state.B is None:
        state.B = np.zeros(grid.Nx)
    rho0 = density(state.f, grid)
    g0 = gauss_residual(state.E[0], rho0 - 1.0, grid, fr.ampere)
    if g0 > gauss_tol:
        raise ValueError(f"initial Gauss residual {g0:.2e} exceeds {gauss_tol:g}")
    _guard(state.f)
    mu_arr = sample_profile(mu, grid)[0] if mu is not None else None
    keys = tuple(k for k in keys if mu_arr is not None or k not in ("L2", "Hneg"))
    diag = _Diagnostics(grid, mu_arr, eps, keys, s_prime, fr.ampere)
    states = []
    n = _nsteps(dt, horizon)

    def snap():
        diag.record(state, state.E, state.B)
        if store_every and (len(diag.rows) - 1) % store_every == 0:
            states.append(state.copy())

    snap()
    s0 = state.s
    for i in range(n):
        state.f, state.E, state.B = st.step(state.f, state.E, state.B)
        state.s = s0 + (i + 1) * dt
        if (i + 1) % diag_every == 0 or i == n - 1:
            _guard(state.f)
            snap()
            if callback is not None:
                callback(state)
            if stop is not None and stop(state, diag.rows):
                break
    meta = {"solver": "vm", "frame": fr.name, "eps": eps, "dt": dt, "splitting": "strang"}
    return diag.trajectory(meta, states, state)
