"""Pure numpy versions of the hot kernels.

Same signatures and in-place semantics as the compiled ``_core`` module;
used when the extension is unavailable and as the reference in tests.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

INF = math.inf


def parabola_envelope_lines(f: np.ndarray) -> None:
    """In place: ``f[l, i] <- min_j f[l, j] + (i - j)**2`` for every line ``l``.

    Brute-force min-plus convolution, chunked so the (lines, n, n) temporary
    stays small. Exact for integer-valued inputs.
    """
    lines, n = f.shape
    offsets = (np.arange(n)[:, None] - np.arange(n)[None, :]) ** 2
    offsets = offsets.astype(np.float64)
    chunk = max(1, (1 << 22) // max(1, n * n))
    for start in range(0, lines, chunk):
        block = f[start:start + chunk]
        f[start:start + chunk] = np.min(block[:, None, :] + offsets[None, :, :], axis=2)


def _forward_diff(u: np.ndarray, axis: int, periodic: bool) -> np.ndarray:
    if periodic:
        return np.roll(u, -1, axis=axis) - u
    g = np.zeros_like(u)
    lo = [slice(None)] * u.ndim
    hi = [slice(None)] * u.ndim
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    g[tuple(lo)] = u[tuple(hi)] - u[tuple(lo)]
    return g


def gradient(u: np.ndarray, periodic: bool = False) -> np.ndarray:
    return np.stack([_forward_diff(u, ax, periodic) for ax in range(u.ndim)])


def divergence(p: np.ndarray, periodic: bool = False) -> np.ndarray:
    """Negative adjoint of :func:`gradient`."""
    out = np.zeros(p.shape[1:])
    for ax in range(p.ndim - 1):
        q = p[ax]
        if periodic:
            out += q - np.roll(q, 1, axis=ax)
            continue
        n = q.shape[ax]
        sl = [slice(None)] * q.ndim
        first = list(sl)
        first[ax] = slice(0, 1)
        out[tuple(first)] += q[tuple(first)]
        mid = list(sl)
        mid[ax] = slice(1, n - 1)
        prev = list(sl)
        prev[ax] = slice(0, n - 2)
        out[tuple(mid)] += q[tuple(mid)] - q[tuple(prev)]
        last = list(sl)
        last[ax] = slice(n - 1, n)
        before = list(sl)
        before[ax] = slice(n - 2, n - 1)
        out[tuple(last)] -= q[tuple(before)]
    return out


def project_dual(q: np.ndarray, isotropic: bool) -> None:
    if isotropic:
        norm = np.sqrt(np.sum(q * q, axis=0))
        np.maximum(norm, 1.0, out=norm)
        q /= norm
    else:
        np.clip(q, -1.0, 1.0, out=q)


def rof_iterate(f, v, vbar, p, isotropic, periodic, tau, sigma, n_iter):
    """Accelerated primal-dual iterations for ``min_v TV(v) + |v - f|^2 / 2``.

    Arrays ``v``, ``vbar`` and ``p`` are updated in place. Returns the step
    sizes ``(tau, sigma)`` to continue from.
    """
    for _ in range(n_iter):
        q = p + sigma * gradient(vbar, periodic)
        project_dual(q, isotropic)
        p[...] = q
        v_new = (v + tau * divergence(p, periodic) + tau * f) / (1.0 + tau)
        theta = 1.0 / math.sqrt(1.0 + 2.0 * tau)
        tau *= theta
        sigma /= theta
        vbar[...] = v_new + theta * (v_new - v)
        v[...] = v_new
    return tau, sigma


def enumerate_min(width, height, k, face_area, weights, tol):
    """Fallback for the cardinality-constrained enumeration.

    Returns ``(best_bits, best_energy, ties, count)`` where ``best_bits`` is
    the tuple of set cell indices of the lexicographically smallest optimum.
    """
    n = width * height
    weights = np.asarray(weights, dtype=np.float64)
    idx = np.arange(n)
    right = [(i, i + 1) for i in idx if (i % width) < width - 1]
    down = [(i, i + width) for i in idx if i + width < n]
    pairs = np.array(right + down, dtype=np.int64)
    count = 0
    energies_all = []
    it = itertools.combinations(range(n), k)
    while True:
        chunk = list(itertools.islice(it, 200_000))
        if not chunk:
            break
        combos = np.array(chunk, dtype=np.int64).reshape(len(chunk), k)
        masks = np.zeros((len(chunk), n), dtype=bool)
        np.put_along_axis(masks, combos, True, axis=1)
        faces = np.count_nonzero(masks[:, pairs[:, 0]] != masks[:, pairs[:, 1]], axis=1)
        energies_all.append(faces * face_area + masks.astype(np.float64) @ weights)
        count += len(chunk)
    energies = np.concatenate(energies_all)
    best = float(energies.min())
    within = np.flatnonzero(energies <= best + tol)
    # combinations() yields index tuples in lexicographic order, which is
    # the reverse of lexicographic order on the 0/1 cell sequence.
    last = int(within[-1])
    best_combo = next(itertools.islice(itertools.combinations(range(n), k), last, None))
    return tuple(best_combo), best, len(within), count
