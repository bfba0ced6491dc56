"""Phase-space grids, states, moments, Poisson solves, norms and rate fits."""
from __future__ import annotations

import itertools
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels


def _pow2(n):
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class PhaseSpaceGrid:
    """Periodic x-grid on [0, M) times a cell-centred v-box [-vmax, vmax]^dv."""

    M: float
    Nx: int
    dv: int
    Nv: int
    vmax: float

    def __post_init__(self):
        if not (self.M > 0 and self.vmax > 0):
            raise ValueError("M and vmax must be positive")
        if not (_pow2(self.Nx) and _pow2(self.Nv)):
            raise ValueError(f"Nx={self.Nx} and Nv={self.Nv} must be powers of two")
        if self.dv not in (1, 2):
            raise ValueError("phase-space grids support dv = 1 or 2")

    @property
    def dx(self):
        return self.M / self.Nx

    @property
    def dvel(self):
        return 2.0 * self.vmax / self.Nv

    @property
    def x(self):
        return np.arange(self.Nx) * self.dx

    @property
    def v(self):
        return -self.vmax + (np.arange(self.Nv) + 0.5) * self.dvel

    @property
    def dvol(self):
        return self.dvel**self.dv

    @property
    def shape(self):
        return (self.Nx,) + (self.Nv,) * self.dv

    @property
    def xi(self):
        return 2 * np.pi * np.fft.fftfreq(self.Nx, self.dx)

    @property
    def rxi(self):
        return 2 * np.pi * np.fft.rfftfreq(self.Nx, self.dx)

    @property
    def kappa(self):
        return 2 * np.pi * np.fft.fftfreq(self.Nv, self.dvel)

    @property
    def rkappa(self):
        return 2 * np.pi * np.fft.rfftfreq(self.Nv, self.dvel)

    def vmesh(self):
        """Velocity points with trailing component axis (dv=2) or flat (dv=1)."""
        v = self.v
        if self.dv == 1:
            return v
        a, b = np.meshgrid(v, v, indexing="ij")
        return np.stack([a, b], axis=-1)

    def vnorm2(self):
        v = self.v
        return v * v if self.dv == 1 else v[:, None] ** 2 + v[None, :] ** 2

    def vhat(self, eps):
        """Relativistic velocity components on the v-grid."""
        g = np.sqrt(1.0 + eps * eps * self.vnorm2())
        v = self.v
        if self.dv == 1:
            return (v / g,)
        return (v[:, None] / g, v[None, :] / g)

    def refine(self, factor=2):
        return PhaseSpaceGrid(self.M, self.Nx * factor, self.dv, self.Nv * factor, self.vmax)

    def record(self):
        return {"M": self.M, "Nx": self.Nx, "dv": self.dv, "Nv": self.Nv, "vmax": self.vmax}


def sample_profile(profile, grid):
    """mu and its gradient sampled on the grid velocities (broadcast-ready)."""
    if profile.dv != grid.dv:
        raise ValueError("profile and grid velocity dimensions differ")
    if grid.vmax < profile.vmax_decay * (1 - 1e-12):
        raise ValueError(f"grid vmax {grid.vmax} below profile decay radius {profile.vmax_decay:.3f}")
    pts = grid.vmesh()
    mu = profile.evaluate(pts)
    g = profile.gradient(pts)
    if grid.dv == 1:
        return mu, (g,)
    return mu, (g[..., 0], g[..., 1])


@dataclass
class KineticState:
    """Distribution f(x, v) with fields; E is (Nx,) for dv=1 and (2, Nx) for dv=2."""

    f: np.ndarray
    E: np.ndarray
    grid: PhaseSpaceGrid
    B: np.ndarray | None = None
    s: float = 0.0
    eps: float = 0.0

    def copy(self):
        return KineticState(self.f.copy(), self.E.copy(), self.grid,
                            None if self.B is None else self.B.copy(), self.s, self.eps)

    @property
    def E1(self):
        return self.E if self.grid.dv == 1 else self.E[0]


def moments(state_or_f, grid=None, eps=None):
    """(rho, j) with j of shape (Nx,) for dv=1 and (2, Nx) for dv=2."""
    if isinstance(state_or_f, KineticState):
        f, grid = state_or_f.f, state_or_f.grid
        eps = state_or_f.eps if eps is None else eps
    else:
        f = state_or_f
        eps = 0.0 if eps is None else eps
    v = grid.v
    if grid.dv == 1:
        rho, j = kernels.moments_1v(f, v, eps)
        return rho * grid.dvel, j * grid.dvel
    rho, j1, j2 = kernels.moments_2v(f, v, v, eps)
    w = grid.dvol
    return rho * w, np.stack([j1 * w, j2 * w])


def density(f, grid):
    axes = tuple(range(1, f.ndim))
    return f.sum(axis=axes) * grid.dvol


def poisson_field(rho_minus_one, grid):
    """Spectral (phi, E) with the zero mode dropped; no mean check."""
    rh = np.fft.rfft(rho_minus_one)
    xi = grid.rxi
    ph = np.zeros_like(rh)
    ph[1:] = rh[1:] / xi[1:] ** 2
    eh = -1j * xi * ph
    n = grid.Nx
    return np.fft.irfft(ph, n), np.fft.irfft(eh, n)


def solve_poisson(rho_minus_one, grid, tol=1e-10):
    """-phi'' = rho - 1, E = -phi'; rejects sources with nonzero mean."""
    r = np.asarray(rho_minus_one, dtype=float)
    mean = float(r.mean())
    if abs(mean) > tol:
        raise ValueError(f"Poisson source has nonzero mean {mean:.3e} (tolerance {tol:g})")
    return poisson_field(r, grid)


def ddx(u, grid, axis=0, order=1):
    """Spectral x-derivative of a real array."""
    n = u.shape[axis]
    uh = np.fft.rfft(u, axis=axis)
    k = grid.rxi
    if n % 2 == 0 and order % 2 == 1:
        k = k.copy()
        k[-1] = 0.0
    sh = [1] * u.ndim
    sh[axis] = k.size
    return np.fft.irfft(uh * (1j * k.reshape(sh)) ** order, n, axis=axis)


def ddv(u, grid, axis, order=1):
    """Spectral derivative along a velocity axis (treated as periodic)."""
    n = u.shape[axis]
    k = grid.rkappa.copy()
    if order % 2 == 1:
        k[-1] = 0.0
    sh = [1] * u.ndim
    sh[axis] = k.size
    uh = np.fft.rfft(u, axis=axis)
    return np.fft.irfft(uh * (1j * k.reshape(sh)) ** order, n, axis=axis)


def l2(u, grid):
    """Grid L2 norm: x-fields (last axis Nx for vectors) or phase-space arrays."""
    u = np.asarray(u)
    if u.shape == grid.shape:
        w = grid.dx * grid.dvol
    else:
        w = grid.dx
    return float(np.sqrt(np.sum(np.abs(u) ** 2) * w))


@dataclass(frozen=True)
class NormSpec:
    """Weighted Sobolev norm: (1+|xi|^2)^order weights on <v>^m f."""

    order: float = 0.0
    vweight: float = 0.0
    phase: bool = True


def sobolev_norm(obj, grid, spec=NormSpec(), warn_tol=1e-12):
    """Frequency-space weighted norm of an x-field or a phase-space array."""
    u = np.asarray(obj)
    if u.shape == grid.shape and spec.phase:
        if spec.vweight:
            u = u * (1.0 + grid.vnorm2()) ** (spec.vweight / 2.0)
        edge = _edge_max(u, grid)
        if edge > warn_tol * max(np.max(np.abs(u)), 1e-300) and spec.order < 0:
            warnings.warn(f"velocity truncation not negligible (edge/max = {edge / np.max(np.abs(u)):.1e})",
                          RuntimeWarning, stacklevel=2)
        c = np.fft.fftn(u) / u.size
        xi2 = grid.xi[:, None] ** 2 if grid.dv == 1 else grid.xi[:, None, None] ** 2
        k2 = grid.kappa**2
        if grid.dv == 1:
            w = 1.0 + xi2 + k2[None, :]
        else:
            w = 1.0 + xi2 + k2[None, :, None] + k2[None, None, :]
        vol = grid.M * (2 * grid.vmax) ** grid.dv
        return float(np.sqrt(np.sum(w**spec.order * np.abs(c) ** 2) * vol))
    if u.shape == grid.shape:
        # x-only norm applied per velocity cell
        c = np.fft.fft(u, axis=0) / grid.Nx
        w = (1.0 + grid.xi**2) ** spec.order
        w = w.reshape((-1,) + (1,) * grid.dv)
        if spec.vweight:
            c = c * (1.0 + grid.vnorm2()) ** (spec.vweight / 2.0)
        return float(np.sqrt(np.sum(w * np.abs(c) ** 2) * grid.M * grid.dvol))
    c = np.fft.fft(u, axis=-1) / grid.Nx
    w = (1.0 + grid.xi**2) ** spec.order
    return float(np.sqrt(np.sum(w * np.abs(c) ** 2) * grid.M))


def _edge_max(u, grid):
    if grid.dv == 1:
        return float(max(np.abs(u[:, 0]).max(), np.abs(u[:, -1]).max()))
    return float(max(np.abs(u[:, [0, -1], :]).max(), np.abs(u[:, :, [0, -1]]).max()))


def hnm_norm(f, grid, n=2, m=3):
    """Sum over |alpha|+|beta| <= n of ||<v>^m d_x^alpha d_v^beta f||_L2."""
    f = np.asarray(f)
    cplx = np.iscomplexobj(f)
    w = (1.0 + grid.vnorm2()) ** (m / 2.0)
    fh = np.fft.fftn(f)
    xi = grid.xi
    ka = grid.kappa.copy()
    total = 0.0
    for idx in itertools.product(range(n + 1), repeat=1 + grid.dv):
        if sum(idx) > n:
            continue
        mult = (1j * xi) ** idx[0]
        mult = mult.reshape((-1,) + (1,) * grid.dv)
        for a, b in enumerate(idx[1:]):
            kk = ka.copy()
            if b % 2 == 1 and grid.Nv % 2 == 0:
                kk[grid.Nv // 2] = 0.0
            sh = [1] * (1 + grid.dv)
            sh[1 + a] = grid.Nv
            mult = mult * ((1j * kk) ** b).reshape(sh)
        d = np.fft.ifftn(fh * mult)
        if not cplx:
            d = d.real
        total += l2(d * w, grid)
    return total


@dataclass(frozen=True)
class FitResult:
    rate: float
    r2: float
    n: int
    intercept: float = 0.0

    def __iter__(self):
        return iter((self.rate, self.r2))


def growth_rate_fit(times, series, window=0.5, min_samples=10):
    """Least-squares slope of log(series) over the last ``window`` fraction of time."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(series, dtype=float)
    if t.shape != y.shape:
        raise ValueError("times and series differ in length")
    t0 = t[-1] - window * (t[-1] - t[0])
    sel = t >= t0 - 1e-12 * max(1.0, abs(t0))
    if sel.sum() < min_samples:
        raise ValueError(f"only {int(sel.sum())} samples in the fit window (need {min_samples})")
    if np.any(y[sel] <= 0) or not np.all(np.isfinite(y[sel])):
        raise ValueError("non-positive or non-finite samples in the fit window")
    tt, ly = t[sel], np.log(y[sel])
    A = np.column_stack([tt, np.ones_like(tt)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ coef
    ss = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss < 1e-30 else 1.0 - float(np.sum((ly - pred) ** 2)) / ss
    return FitResult(float(coef[0]), r2, int(sel.sum()), float(coef[1]))


def loglog_slope(x, y):
    """Slope and R^2 of log y against log x."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    ss = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum((ly - A @ coef) ** 2)) / ss if ss > 0 else 1.0
    return float(coef[0]), r2


# ---------------------------------------------------------------------------
# flat binary snapshots

_MAGIC = b"VMKT"
_VERSION = 1


def write_state(path, state):
    """Little-endian dump: magic, header ints/reals, then f, E and B."""
    g = state.grid
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<4q", _VERSION, g.dv, g.Nx, g.Nv))
        fh.write(struct.pack("<5d", g.M, g.vmax, state.eps, state.s, 1.0 if state.B is not None else 0.0))
        fh.write(np.ascontiguousarray(state.f, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state.E, dtype="<f8").tobytes())
        if state.B is not None:
            fh.write(np.ascontiguousarray(state.B, dtype="<f8").tobytes())


def read_state(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path} is not a state dump")
        ver, dv, nx, nv = struct.unpack("<4q", fh.read(32))
        if ver != _VERSION:
            raise ValueError(f"unsupported dump version {ver}")
        M, vmax, eps, s, hasb = struct.unpack("<5d", fh.read(40))
        grid = PhaseSpaceGrid(M, nx, dv, nv, vmax)
        f = np.frombuffer(fh.read(8 * int(np.prod(grid.shape))), dtype="<f8").reshape(grid.shape)
        ne = nx if dv == 1 else 2 * nx
        E = np.frombuffer(fh.read(8 * ne), dtype="<f8").reshape((nx,) if dv == 1 else (2, nx))
        B = np.frombuffer(fh.read(8 * nx), dtype="<f8").copy() if hasb else None
    return KineticState(f.copy(), E.copy(), grid, B, s, eps)


@dataclass
class Series:
    """Append-only named columns, used for diagnostics tables."""

    columns: dict = field(default_factory=dict)

    def add(self, **row):
        for k, v in row.items():
            self.columns.setdefault(k, []).append(v)

    def array(self, key):
        return np.asarray(self.columns[key])

    def __len__(self):
        return len(next(iter(self.columns.values()), []))


def mean_zero_check(g, grid, tol=1e-10):
    total = float(np.sum(g) * grid.dx * grid.dvol)
    scale = float(np.sum(np.abs(g)) * grid.dx * grid.dvol)
    if abs(total) > tol * max(scale, 1.0):
        raise ValueError(f"perturbation is not mean-zero (integral {total:.3e})")
    return total


__all__ = [
    "PhaseSpaceGrid", "KineticState", "NormSpec", "FitResult", "moments", "density",
    "solve_poisson", "poisson_field", "sobolev_norm", "hnm_norm", "growth_rate_fit",
    "loglog_slope", "ddx", "ddv", "l2", "write_state", "read_state", "sample_profile",
]
