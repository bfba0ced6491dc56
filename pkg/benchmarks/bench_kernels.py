"""Time the compiled kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5] [--csv out.csv]

Both backends live in the same module, so one process times both; the
numba column is measured after a warm-up call (compile time reported
separately).
"""
import argparse
import csv
import sys
import time

import numpy as np

from vmkit import kernels as K


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def cases():
    rng = np.random.default_rng(0)
    s = np.linspace(-8, 8, 2049)
    h = np.exp(-s**2 / 2) * (1 + 0.1 * np.cos(3 * s))
    ds = s[1] - s[0]
    om = (rng.uniform(-3, 3, 512) + 1j * rng.uniform(1e-3, 3, 512)).astype(complex)
    v = np.linspace(-6, 6, 128)
    f2 = rng.random((32, 128, 128))
    f1 = rng.random((64, 512))
    yield ("cauchy_sinc", lambda: K.cauchy_sinc_np(h, s[0], ds, om),
           lambda: K.cauchy_sinc_nb(h, float(s[0]), float(ds), om))
    yield ("cauchy_trap", lambda: K.cauchy_trap_np(h * ds, s, om), lambda: K.cauchy_trap_nb(h * ds, s, om))
    yield ("moments_2v", lambda: K.moments_2v_np(f2, v, v, 0.1), lambda: K.moments_2v_nb(f2, v, v, 0.1))
    yield ("moments_1v", lambda: K.moments_1v_np(f1, np.linspace(-6, 6, 512), 0.1),
           lambda: K.moments_1v_nb(f1, np.linspace(-6, 6, 512), 0.1))


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--csv", default=None)
    args = ap.parse_args(argv)
    if not K.HAVE_NUMBA:
        print("numba unavailable (or VMKIT_DISABLE_NUMBA set); timing numpy only", file=sys.stderr)
    rows = []
    for name, f_np, f_nb in cases():
        t_np = _best(f_np, args.repeat)
        row = {"kernel": name, "numpy_s": t_np, "numba_s": None, "compile_s": None, "speedup": None}
        if K.HAVE_NUMBA:
            t0 = time.perf_counter()
            out_nb = f_nb()
            row["compile_s"] = time.perf_counter() - t0
            out_np = f_np()
            err = max(float(np.max(np.abs(np.asarray(a) - np.asarray(b))) / (np.max(np.abs(b)) + 1e-300))
                      for a, b in zip(out_nb, out_np))
            row["numba_s"] = _best(f_nb, args.repeat)
            row["speedup"] = t_np / row["numba_s"]
            row["max_rel_diff"] = err
        rows.append(row)
        print(f"{name:12s} numpy {t_np * 1e3:9.2f} ms", end="")
        if row["numba_s"] is not None:
            print(f"  numba {row['numba_s'] * 1e3:9.2f} ms  x{row['speedup']:6.1f}"
                  f"  (first call {row['compile_s']:.2f} s, rel diff {row['max_rel_diff']:.1e})")
        else:
            print()
    if args.csv:
        cols = ["kernel", "numpy_s", "numba_s", "compile_s", "speedup", "max_rel_diff"]
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, cols, extrasaction="ignore")
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()
