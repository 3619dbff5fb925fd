"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np

BACKEND = "python"

_FLOOR = 1e-150


def lbp_association(psi, clutter, tol, max_iter, damping):
    psi = np.asarray(psi, dtype=float)
    clutter = np.asarray(clutter, dtype=float)
    n, m = psi.shape
    if n == 0 or m == 0:
        return np.zeros((n, m)), np.ones(n), np.ones(m), True, 0

    mu = np.zeros((n, m))
    nu = np.ones((n, m))
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        prod = psi * nu
        row = 1.0 + prod.sum(axis=1)
        new_mu = psi / np.maximum(row[:, None] - prod, _FLOOR)
        mu = damping * mu + (1.0 - damping) * new_mu
        col = clutter + mu.sum(axis=0)
        new_nu = 1.0 / np.maximum(col[None, :] - mu, _FLOOR)
        big = np.max(np.abs(new_nu - nu) / np.maximum(new_nu, 1.0))
        nu = damping * nu + (1.0 - damping) * new_nu
        if big < tol:
            converged = True
            break

    prod = psi * nu
    row = 1.0 + prod.sum(axis=1)
    mu = psi / np.maximum(row[:, None] - prod, _FLOOR)
    col = clutter + mu.sum(axis=0)
    nu = 1.0 / np.maximum(col[None, :] - mu, _FLOOR)

    prod = psi * nu
    row = 1.0 + prod.sum(axis=1)
    P = prod / row[:, None]
    P_miss = 1.0 / row
    col = clutter + mu.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        P_clutter = np.where(col > 0.0, clutter / col, 0.0)
    return P, P_miss, P_clutter, converged, it


def subset_dp_marginals(W, miss, clutter):
    W = np.asarray(W, dtype=float)
    miss = np.asarray(miss, dtype=float)
    clutter = np.asarray(clutter, dtype=float)
    n, m = W.shape
    S = 1 << m
    masks = np.arange(S)
    bits = [(masks >> j) & 1 == 1 for j in range(m)]

    F = np.zeros((n + 1, S))
    F[0, 0] = 1.0
    for i in range(n):
        F[i + 1] = F[i] * miss[i]
        for j in range(m):
            free = ~bits[j]
            F[i + 1, masks[free] | (1 << j)] += F[i, free] * W[i, j]

    G = np.zeros((n + 1, S))
    G[n] = 1.0
    for j in range(m):
        G[n, ~bits[j]] *= clutter[j]
    for i in range(n - 1, -1, -1):
        G[i] = miss[i] * G[i + 1]
        for j in range(m):
            free = ~bits[j]
            G[i, free] += W[i, j] * G[i + 1, masks[free] | (1 << j)]

    total = G[0, 0]
    P = np.zeros((n, m))
    P_miss = np.zeros(n)
    P_clutter = np.zeros(m)
    if total <= 0.0:
        return P, P_miss, P_clutter, total
    for i in range(n):
        P_miss[i] = np.dot(F[i], G[i + 1]) * miss[i] / total
        for j in range(m):
            free = ~bits[j]
            P[i, j] = np.dot(F[i, free], G[i + 1, masks[free] | (1 << j)]) * W[i, j] / total
    end = F[n] * G[n]
    for j in range(m):
        P_clutter[j] = end[~bits[j]].sum() / total
    return P, P_miss, P_clutter, total


def interval_cover(lo, hi, weight, ncells):
    lo = np.clip(np.asarray(lo, dtype=np.int64), 0, None)
    hi = np.minimum(np.asarray(hi, dtype=np.int64), ncells - 1)
    weight = np.asarray(weight, dtype=float)
    ok = lo <= hi
    diff = np.zeros(ncells + 1)
    np.add.at(diff, lo[ok], weight[ok])
    np.add.at(diff, hi[ok] + 1, -weight[ok])
    return np.cumsum(diff[:-1])


def range_max(values, lo, hi, fill):
    values = np.asarray(values, dtype=float)
    C = values.shape[0]
    lo = np.clip(np.asarray(lo, dtype=np.int64), 0, None)
    hi = np.minimum(np.asarray(hi, dtype=np.int64), C - 1)
    out = np.full(lo.shape[0], float(fill))
    ok = lo <= hi
    if C == 0 or not ok.any():
        return out
    # sparse table: table[k][c] = max(values[c : c + 2**k])
    table = [values]
    span = 1
    while 2 * span <= C:
        prev = table[-1]
        table.append(np.maximum(prev[:-span], prev[span:]))
        span *= 2
    a, b = lo[ok], hi[ok]
    length = b - a + 1
    k = np.floor(np.log2(length)).astype(np.int64)
    res = np.empty(a.shape[0])
    for level in np.unique(k):
        sel = k == level
        t = table[level]
        res[sel] = np.maximum(t[a[sel]], t[b[sel] - (1 << level) + 1])
    out[ok] = res
    return out
