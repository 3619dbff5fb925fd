# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Mirrors ``_kernels_py`` function for function."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

BACKEND = "cython"


def lbp_association(double[:, ::1] psi, double[::1] clutter, double tol,
                    int max_iter, double damping):
    """Loopy belief propagation on the track/measurement bipartite graph.

    ``psi[i, j]`` is the detection weight divided by the miss weight of
    track ``i``. Returns ``(P, P_miss, P_clutter, converged, iterations)``.
    """
    cdef Py_ssize_t n = psi.shape[0]
    cdef Py_ssize_t m = psi.shape[1]
    cdef Py_ssize_t i, j
    cdef double s, d, new, delta, big
    cdef int it = 0
    cdef bint converged = False

    P_np = np.zeros((n, m))
    Pm_np = np.ones(n)
    Pc_np = np.ones(m)
    if n == 0 or m == 0:
        return P_np, Pm_np, Pc_np, True, 0

    mu_np = np.zeros((n, m))
    nu_np = np.ones((n, m))
    row_np = np.zeros(n)
    col_np = np.zeros(m)
    cdef double[:, ::1] mu = mu_np
    cdef double[:, ::1] nu = nu_np
    cdef double[::1] row = row_np
    cdef double[::1] col = col_np
    cdef double[:, ::1] P = P_np
    cdef double[::1] Pm = Pm_np
    cdef double[::1] Pc = Pc_np
    cdef double floor = 1e-150

    while it < max_iter:
        it += 1
        big = 0.0
        for i in range(n):
            s = 1.0
            for j in range(m):
                s += psi[i, j] * nu[i, j]
            row[i] = s
        for i in range(n):
            for j in range(m):
                d = row[i] - psi[i, j] * nu[i, j]
                if d < floor:
                    d = floor
                new = psi[i, j] / d
                mu[i, j] = damping * mu[i, j] + (1.0 - damping) * new
        for j in range(m):
            s = clutter[j]
            for i in range(n):
                s += mu[i, j]
            col[j] = s
        for i in range(n):
            for j in range(m):
                d = col[j] - mu[i, j]
                if d < floor:
                    d = floor
                new = 1.0 / d
                delta = fabs(new - nu[i, j]) / (new if new > 1.0 else 1.0)
                if delta > big:
                    big = delta
                nu[i, j] = damping * nu[i, j] + (1.0 - damping) * new
        if big < tol:
            converged = True
            break

    # final undamped sweep so tree-structured problems come out exact
    for i in range(n):
        s = 1.0
        for j in range(m):
            s += psi[i, j] * nu[i, j]
        row[i] = s
    for i in range(n):
        for j in range(m):
            d = row[i] - psi[i, j] * nu[i, j]
            if d < floor:
                d = floor
            mu[i, j] = psi[i, j] / d
    for j in range(m):
        s = clutter[j]
        for i in range(n):
            s += mu[i, j]
        col[j] = s
    for i in range(n):
        for j in range(m):
            d = col[j] - mu[i, j]
            if d < floor:
                d = floor
            nu[i, j] = 1.0 / d

    for i in range(n):
        s = 1.0
        for j in range(m):
            s += psi[i, j] * nu[i, j]
        Pm[i] = 1.0 / s
        for j in range(m):
            P[i, j] = psi[i, j] * nu[i, j] / s
    for j in range(m):
        s = clutter[j]
        for i in range(n):
            s += mu[i, j]
        Pc[j] = clutter[j] / s if s > 0.0 else 0.0
    return P_np, Pm_np, Pc_np, bool(converged), it


def subset_dp_marginals(double[:, ::1] W, double[::1] miss, double[::1] clutter):
    """Exact association marginals by forward/backward DP over measurement subsets.

    Returns ``(P, P_miss, P_clutter, total)`` where ``total`` is the sum of
    weights over every valid association.
    """
    cdef Py_ssize_t n = W.shape[0]
    cdef Py_ssize_t m = W.shape[1]
    cdef Py_ssize_t S = 1 << m
    cdef Py_ssize_t i, j, mask, bit
    cdef double f, g, total, acc

    F_np = np.zeros((n + 1, S))
    G_np = np.zeros((n + 1, S))
    cdef double[:, ::1] F = F_np
    cdef double[:, ::1] G = G_np

    F[0, 0] = 1.0
    for i in range(n):
        for mask in range(S):
            f = F[i, mask]
            if f == 0.0:
                continue
            F[i + 1, mask] += f * miss[i]
            for j in range(m):
                bit = 1 << j
                if not (mask & bit):
                    F[i + 1, mask | bit] += f * W[i, j]

    for mask in range(S):
        acc = 1.0
        for j in range(m):
            if not (mask & (1 << j)):
                acc *= clutter[j]
        G[n, mask] = acc
    for i in range(n - 1, -1, -1):
        for mask in range(S):
            acc = miss[i] * G[i + 1, mask]
            for j in range(m):
                bit = 1 << j
                if not (mask & bit):
                    acc += W[i, j] * G[i + 1, mask | bit]
            G[i, mask] = acc

    total = G[0, 0]
    P_np = np.zeros((n, m))
    Pm_np = np.zeros(n)
    Pc_np = np.zeros(m)
    cdef double[:, ::1] P = P_np
    cdef double[::1] Pm = Pm_np
    cdef double[::1] Pc = Pc_np
    if total <= 0.0:
        return P_np, Pm_np, Pc_np, total

    for i in range(n):
        for mask in range(S):
            f = F[i, mask]
            if f == 0.0:
                continue
            Pm[i] += f * miss[i] * G[i + 1, mask]
            for j in range(m):
                bit = 1 << j
                if not (mask & bit):
                    P[i, j] += f * W[i, j] * G[i + 1, mask | bit]
        Pm[i] /= total
        for j in range(m):
            P[i, j] /= total
    for mask in range(S):
        f = F[n, mask] * G[n, mask]
        if f == 0.0:
            continue
        for j in range(m):
            if not (mask & (1 << j)):
                Pc[j] += f
    for j in range(m):
        Pc[j] /= total
    return P_np, Pm_np, Pc_np, total


def interval_cover(cnp.int64_t[::1] lo, cnp.int64_t[::1] hi, double[::1] weight,
                   Py_ssize_t ncells):
    """Sum of ``weight[k]`` over intervals ``[lo[k], hi[k]]`` covering each cell."""
    cdef Py_ssize_t k, a, b
    cdef Py_ssize_t K = lo.shape[0]
    diff_np = np.zeros(ncells + 1)
    cdef double[::1] diff = diff_np
    for k in range(K):
        a = lo[k]
        b = hi[k]
        if a < 0:
            a = 0
        if b > ncells - 1:
            b = ncells - 1
        if a > b:
            continue
        diff[a] += weight[k]
        diff[b + 1] -= weight[k]
    out_np = np.empty(ncells)
    cdef double[::1] out = out_np
    cdef double acc = 0.0
    for k in range(ncells):
        acc += diff[k]
        out[k] = acc
    return out_np


def range_max(double[::1] values, cnp.int64_t[::1] lo, cnp.int64_t[::1] hi,
              double fill):
    """``max(values[lo[k]:hi[k]+1])`` per query; ``fill`` for empty ranges."""
    cdef Py_ssize_t k, c, a, b
    cdef Py_ssize_t K = lo.shape[0]
    cdef Py_ssize_t C = values.shape[0]
    cdef double best
    out_np = np.empty(K)
    cdef double[::1] out = out_np
    for k in range(K):
        a = lo[k]
        b = hi[k]
        if a < 0:
            a = 0
        if b > C - 1:
            b = C - 1
        if a > b:
            out[k] = fill
            continue
        best = values[a]
        for c in range(a + 1, b + 1):
            if values[c] > best:
                best = values[c]
        out[k] = best
    return out_np
