# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: parabola lower envelopes, the ROF primal-dual loop
on 2D grids, and the fixed-cardinality enumeration behind the oracle."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY
from libc.stdint cimport uint32_t

cnp.import_array()

cdef extern from *:
    int __builtin_popcount(unsigned int) nogil


def parabola_envelope_lines(double[:, ::1] f):
    """In place: ``f[l, i] <- min_j f[l, j] + (i - j)**2`` (Felzenszwalb-Huttenlocher)."""
    cdef Py_ssize_t lines = f.shape[0], n = f.shape[1]
    cdef Py_ssize_t l, q, k
    cdef double s
    cdef cnp.ndarray[cnp.intp_t, ndim=1] v_arr = np.empty(n, dtype=np.intp)
    cdef cnp.ndarray[double, ndim=1] z_arr = np.empty(n + 1, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] row_arr = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t[::1] v = v_arr
    cdef double[::1] z = z_arr
    cdef double[::1] row = row_arr
    with nogil:
        for l in range(lines):
            k = -1
            for q in range(n):
                row[q] = f[l, q]
                if row[q] == INFINITY:
                    continue
                if k < 0:
                    k = 0
                    v[0] = q
                    z[0] = -INFINITY
                    z[1] = INFINITY
                    continue
                s = ((row[q] + q * q) - (row[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
                while s <= z[k]:
                    k -= 1
                    s = ((row[q] + q * q) - (row[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
                k += 1
                v[k] = q
                z[k] = s
                z[k + 1] = INFINITY
            if k < 0:
                continue
            k = 0
            for q in range(n):
                while z[k + 1] < q:
                    k += 1
                f[l, q] = (q - v[k]) * (q - v[k]) + row[v[k]]


def rof_iterate(double[:, ::1] f, double[:, ::1] v, double[:, ::1] vbar,
                double[:, :, ::1] p, bint isotropic, bint periodic,
                double tau, double sigma, Py_ssize_t n_iter):
    """Accelerated primal-dual loop for ``min_v TV(v) + |v - f|^2 / 2`` (2D).

    Updates ``v``, ``vbar``, ``p`` in place; returns ``(tau, sigma)``.
    """
    cdef Py_ssize_t nx = f.shape[0], ny = f.shape[1]
    cdef Py_ssize_t it, i, j, ip, jp, im, jm
    cdef double gx, gy, qx, qy, nrm, theta, vn, div
    with nogil:
        for it in range(n_iter):
            for i in range(nx):
                ip = i + 1
                if ip == nx:
                    ip = 0 if periodic else -1
                for j in range(ny):
                    jp = j + 1
                    if jp == ny:
                        jp = 0 if periodic else -1
                    gx = vbar[ip, j] - vbar[i, j] if ip >= 0 else 0.0
                    gy = vbar[i, jp] - vbar[i, j] if jp >= 0 else 0.0
                    qx = p[0, i, j] + sigma * gx
                    qy = p[1, i, j] + sigma * gy
                    if isotropic:
                        nrm = sqrt(qx * qx + qy * qy)
                        if nrm > 1.0:
                            qx = qx / nrm
                            qy = qy / nrm
                    else:
                        if qx > 1.0:
                            qx = 1.0
                        elif qx < -1.0:
                            qx = -1.0
                        if qy > 1.0:
                            qy = 1.0
                        elif qy < -1.0:
                            qy = -1.0
                    p[0, i, j] = qx
                    p[1, i, j] = qy
            theta = 1.0 / sqrt(1.0 + 2.0 * tau)
            for i in range(nx):
                im = i - 1
                if im < 0:
                    im = nx - 1 if periodic else -1
                for j in range(ny):
                    jm = j - 1
                    if jm < 0:
                        jm = ny - 1 if periodic else -1
                    div = 0.0
                    if periodic or i < nx - 1:
                        div += p[0, i, j]
                    if im >= 0:
                        div -= p[0, im, j]
                    if periodic or j < ny - 1:
                        div += p[1, i, j]
                    if jm >= 0:
                        div -= p[1, i, jm]
                    vn = (v[i, j] + tau * div + tau * f[i, j]) / (1.0 + tau)
                    vbar[i, j] = vn + theta * (vn - v[i, j])
                    v[i, j] = vn
            tau *= theta
            sigma /= theta
    return tau, sigma


def enumerate_min(int width, int height, int k, double face_area, weights, double tol):
    """Enumerate all ``k``-subsets of a ``height x width`` grid (Gosper's hack).

    Energy of a subset is ``face_area * (# set/unset face pairs) + sum(weights)``.
    Cell ``i`` maps to bit ``n-1-i`` so integer order equals lexicographic
    order of the row-major 0/1 sequence. Returns
    ``(best_cells, best_energy, ties, count)``.
    """
    cdef int n = width * height
    if n > 30 or n < 1 or k < 1 or k >= n:
        raise ValueError("enumeration needs 1 <= k < n <= 30")
    cdef double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef double[::1] t0 = np.zeros(1024, dtype=np.float64)
    cdef double[::1] t1 = np.zeros(1024, dtype=np.float64)
    cdef double[::1] t2 = np.zeros(1024, dtype=np.float64)
    cdef uint32_t hmask = 0, vmask = 0
    cdef int i, b, c
    cdef double acc
    for i in range(n):
        b = n - 1 - i
        if (i % width) < width - 1:
            hmask |= (<uint32_t>1) << (b - 1)
        if i + width < n:
            vmask |= (<uint32_t>1) << (b - width)
    # chunked lookup tables of per-bit weight sums, 10 bits per table
    for c in range(1024):
        for t, table in enumerate((t0, t1, t2)):
            acc = 0.0
            for b in range(10):
                if (c >> b) & 1:
                    bit = 10 * t + b
                    if bit < n:
                        acc += w[n - 1 - bit]
            table[c] = acc
    cdef uint32_t m, last, lo, r, best_m = 0
    cdef double e, best = INFINITY
    cdef long long count = 0, ties = 0
    cdef int pass_no
    last = (((<uint32_t>1) << k) - 1) << (n - k)
    for pass_no in range(2):
        m = ((<uint32_t>1) << k) - 1
        with nogil:
            while True:
                e = face_area * (__builtin_popcount((m ^ (m >> 1)) & hmask)
                                 + __builtin_popcount((m ^ (m >> width)) & vmask))
                e = e + (t0[m & 1023] + t1[(m >> 10) & 1023] + t2[(m >> 20) & 1023])
                if pass_no == 0:
                    count += 1
                    if e < best:
                        best = e
                elif e <= best + tol:
                    if ties == 0:
                        best_m = m
                    ties += 1
                if m == last:
                    break
                lo = m & (~m + 1)
                r = m + lo
                m = (((r ^ m) >> 2) // lo) | r
    cells = tuple(i for i in range(n) if (best_m >> (n - 1 - i)) & 1)
    return cells, best, ties, count
