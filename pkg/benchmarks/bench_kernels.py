"""Compare the compiled kernels with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel runs on the same inputs through both backends; the table shows
the best wall time of N repeats and the largest output difference.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from flatflow import _kernels


def _best_time(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_envelope(backend, n=256):
    rng = np.random.default_rng(0)
    f0 = np.where(rng.random((n, n)) < 0.05, 0.0, 1e12)

    def go():
        f = f0.copy()
        _kernels.parabola_envelope_lines(f, backend=backend)
        return f
    return go


def bench_rof(backend, n=128, iters=200):
    rng = np.random.default_rng(1)
    data = rng.normal(size=(n, n))

    def go():
        v = np.zeros((n, n))
        vbar = np.zeros((n, n))
        p = np.zeros((2, n, n))
        _kernels.rof_iterate(data, v, vbar, p, True, False, 0.25, 0.5, iters, backend=backend)
        return v
    return go


def bench_enumeration(backend, n=4, k=8):
    rng = np.random.default_rng(2)
    w = rng.normal(size=n * n)

    def go():
        cells, best, ties, count = _kernels.enumerate_min(n, n, k, 1.0, w, 1e-9, backend=backend)
        return np.array([best, count, *cells], dtype=float)
    return go


CASES = [("parabola envelope 256x256", bench_envelope),
         ("ROF 128x128, 200 iterations", bench_rof),
         ("enumeration 4x4, k=8", bench_enumeration)]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _kernels.BACKEND != "compiled":
        print("compiled kernels are not built; only the fallback can be timed")
    print(f"{'kernel':32s} {'compiled s':>11s} {'python s':>11s} {'speedup':>8s} {'max diff':>10s}")
    for name, make in CASES:
        tp, outp = _best_time(make("python"), args.repeat)
        if _kernels.BACKEND == "compiled":
            tc, outc = _best_time(make("compiled"), args.repeat)
            diff = float(np.max(np.abs(outc - outp)))
            print(f"{name:32s} {tc:11.4f} {tp:11.4f} {tp / tc:8.1f} {diff:10.2e}")
        else:
            print(f"{name:32s} {'-':>11s} {tp:11.4f} {'-':>8s} {'-':>10s}")


if __name__ == "__main__":
    main()
