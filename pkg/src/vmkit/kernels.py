"""Hot loops shared by the dispersion and moment code.

Each kernel has a pure-numpy implementation (``*_np``) and, when numba is
importable, a compiled twin (``*_nb``).  The public names dispatch to the
compiled version unless ``VMKIT_DISABLE_NUMBA`` is set to a truthy value.
"""
import os

import numpy as np

_FLAG = os.environ.get("VMKIT_DISABLE_NUMBA", "").strip().lower()
DISABLED = _FLAG in ("1", "true", "yes", "on")

try:
    if DISABLED:
        raise ImportError("disabled by VMKIT_DISABLE_NUMBA")
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"

# e^{i pi z} drops below 1e-17 once Im z exceeds this
_IMZ_CUT = 12.5
_SMALL_Z = 1e-3
_CHUNK = 256


def _sinc_terms(z):
    """(e^{i pi z} - 1)/z and its z-derivative, vectorized."""
    ipz = 1j * np.pi * z
    e = np.where(z.imag < _IMZ_CUT, np.exp(np.where(z.imag < _IMZ_CUT, ipz, 0.0)), 0.0)
    small = np.abs(z) < _SMALL_Z
    zs = np.where(small, 1.0, z)
    t = (e - 1.0) / zs
    dt = 1j * np.pi * e / zs - (e - 1.0) / zs**2
    if small.any():
        a = 1j * np.pi
        zz = z[small]
        t[small] = a * (1 + a * zz / 2 + (a * zz) ** 2 / 6 + (a * zz) ** 3 / 24)
        dt[small] = a * (a / 2 + (a**2) * zz / 3 + (a**3) * zz**2 / 8)
    return t, dt


def cauchy_sinc_np(h, s0, ds, omegas):
    """Sinc-quadrature of int h(s)/(s - w) ds for samples h_j = h(s0 + j ds).

    Exact for band-limited h and finite as Im w -> 0+.  Returns the integral
    and its derivative in w for every entry of ``omegas``.
    """
    h = np.ascontiguousarray(h, dtype=np.float64)
    w = np.atleast_1d(np.asarray(omegas, dtype=np.complex128)).ravel()
    s = s0 + ds * np.arange(h.size)
    val = np.empty(w.size, np.complex128)
    der = np.empty(w.size, np.complex128)
    for i in range(0, w.size, _CHUNK):
        z = (w[i:i + _CHUNK, None] - s[None, :]) / ds
        t, dt = _sinc_terms(z)
        val[i:i + _CHUNK] = t @ h
        der[i:i + _CHUNK] = (dt @ h) / ds
    return val, der


def cauchy_trap_np(w, s, omegas):
    """Plain sums sum_j w_j/(s_j - omega) and sum_j w_j/(s_j - omega)^2."""
    om = np.atleast_1d(np.asarray(omegas, dtype=np.complex128)).ravel()
    d = 1.0 / (s[None, :] - om[:, None])
    return d @ w, (d * d) @ w


def moments_2v_np(f, v1, v2, eps):
    """rho, j1, j2 (unscaled sums over the velocity axes) of f(x, v1, v2)."""
    g = np.sqrt(1.0 + eps * eps * (v1[:, None] ** 2 + v2[None, :] ** 2))
    u1 = v1[:, None] / g
    u2 = v2[None, :] / g
    rho = f.sum(axis=(1, 2))
    j1 = np.einsum("ijk,jk->i", f, u1)
    j2 = np.einsum("ijk,jk->i", f, u2)
    return rho, j1, j2


def moments_1v_np(f, v, eps):
    u = v / np.sqrt(1.0 + eps * eps * v * v)
    return f.sum(axis=1), f @ u


if HAVE_NUMBA:
    @njit(cache=True)
    def cauchy_sinc_nb(h, s0, ds, omegas):
        n = h.size
        m = omegas.size
        val = np.zeros(m, np.complex128)
        der = np.zeros(m, np.complex128)
        a = 1j * np.pi
        for i in range(m):
            acc = 0j
            dacc = 0j
            for j in range(n):
                hj = h[j]
                if hj == 0.0:
                    continue
                z = (omegas[i] - (s0 + j * ds)) / ds
                if abs(z) < _SMALL_Z:
                    t = a * (1 + a * z / 2 + (a * z) ** 2 / 6 + (a * z) ** 3 / 24)
                    dt = a * (a / 2 + (a * a) * z / 3 + (a * a * a) * z * z / 8)
                elif z.imag >= _IMZ_CUT:
                    t = -1.0 / z
                    dt = 1.0 / (z * z)
                else:
                    e = np.exp(a * z)
                    t = (e - 1.0) / z
                    dt = a * e / z - (e - 1.0) / (z * z)
                acc += hj * t
                dacc += hj * dt
            val[i] = acc
            der[i] = dacc / ds
        return val, der

    @njit(cache=True)
    def cauchy_trap_nb(w, s, omegas):
        m = omegas.size
        a = np.zeros(m, np.complex128)
        b = np.zeros(m, np.complex128)
        for i in range(m):
            acc = 0j
            acc2 = 0j
            for j in range(s.size):
                d = 1.0 / (s[j] - omegas[i])
                acc += w[j] * d
                acc2 += w[j] * d * d
            a[i] = acc
            b[i] = acc2
        return a, b

    @njit(cache=True)
    def moments_2v_nb(f, v1, v2, eps):
        nx, n1, n2 = f.shape
        u1 = np.empty((n1, n2))
        u2 = np.empty((n1, n2))
        for j in range(n1):
            for k in range(n2):
                g = np.sqrt(1.0 + eps * eps * (v1[j] * v1[j] + v2[k] * v2[k]))
                u1[j, k] = v1[j] / g
                u2[j, k] = v2[k] / g
        rho = np.zeros(nx)
        j1 = np.zeros(nx)
        j2 = np.zeros(nx)
        for i in range(nx):
            r = 0.0
            a = 0.0
            b = 0.0
            for j in range(n1):
                for k in range(n2):
                    fv = f[i, j, k]
                    r += fv
                    a += fv * u1[j, k]
                    b += fv * u2[j, k]
            rho[i] = r
            j1[i] = a
            j2[i] = b
        return rho, j1, j2

    @njit(cache=True)
    def moments_1v_nb(f, v, eps):
        nx, nv = f.shape
        rho = np.zeros(nx)
        j = np.zeros(nx)
        for i in range(nx):
            r = 0.0
            a = 0.0
            for k in range(nv):
                u = v[k] / np.sqrt(1.0 + eps * eps * v[k] * v[k])
                r += f[i, k]
                a += f[i, k] * u
            rho[i] = r
            j[i] = a
        return rho, j


def cauchy_sinc(h, s0, ds, omegas):
    w = np.atleast_1d(np.asarray(omegas, dtype=np.complex128)).ravel()
    h = np.ascontiguousarray(h, dtype=np.float64)
    if HAVE_NUMBA:
        return cauchy_sinc_nb(h, float(s0), float(ds), w)
    return cauchy_sinc_np(h, s0, ds, w)


def cauchy_trap(w, s, omegas):
    om = np.atleast_1d(np.asarray(omegas, dtype=np.complex128)).ravel()
    w = np.ascontiguousarray(w, dtype=np.float64)
    s = np.ascontiguousarray(s, dtype=np.float64)
    if HAVE_NUMBA:
        return cauchy_trap_nb(w, s, om)
    return cauchy_trap_np(w, s, om)


def moments_2v(f, v1, v2, eps):
    if HAVE_NUMBA:
        return moments_2v_nb(np.ascontiguousarray(f), v1, v2, float(eps))
    return moments_2v_np(f, v1, v2, eps)


def moments_1v(f, v, eps):
    if HAVE_NUMBA:
        return moments_1v_nb(np.ascontiguousarray(f), v, float(eps))
    return moments_1v_np(f, v, eps)
