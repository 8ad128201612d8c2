"""Compiled kernels for representative-point selection.

Distances are recomputed on the fly instead of materializing the
particle-by-candidate matrix, which at lattice scale would not fit in memory.
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _cost(X, i, Z, k, p):
    s = 0.0
    for d in range(X.shape[1]):
        diff = X[i, d] - Z[k, d]
        s += diff * diff
    s = np.sqrt(s)
    if p == 1.0:
        return s
    return s**p


@njit(cache=True)
def nearest(X, Z, p):
    """Index of the nearest row of ``Z`` for every row of ``X`` (lowest
    index on ties) and the cost ``d**p`` to it."""
    n = X.shape[0]
    idx = np.empty(n, np.int64)
    best = np.empty(n, np.float64)
    for i in range(n):
        b = np.inf
        bk = -1
        for k in range(Z.shape[0]):
            c = _cost(X, i, Z, k, p)
            if c < b:
                b = c
                bk = k
        idx[i] = bk
        best[i] = b
    return idx, best


@njit(cache=True)
def _gain(X, w, Z, k, p, cur):
    g = 0.0
    for i in range(X.shape[0]):
        c = _cost(X, i, Z, k, p)
        if c < cur[i]:
            g += w[i] * (cur[i] - c)
    return g


@njit(cache=True)
def greedy_lazy(X, w, Z, M, p):
    """Greedy weighted k-median over candidate rows of ``Z``.

    Each step adds the candidate with the largest cost reduction; reductions
    within a relative 1e-12 of the best count as ties and go to the lowest
    index.  Lazy re-evaluation of stale upper bounds returns the plain greedy
    sequence because the reductions are submodular.
    """
    n = X.shape[0]
    K = Z.shape[0]
    M = min(M, K)
    chosen = np.empty(M, np.int64)
    used = np.zeros(K, np.bool_)
    # first site: the 1-median among candidates
    tot = np.zeros(K)
    for k in range(K):
        s = 0.0
        for i in range(n):
            s += w[i] * _cost(X, i, Z, k, p)
        tot[k] = s
    mn = tot.min()
    k0 = 0
    while tot[k0] > mn + 1e-12 * abs(mn):
        k0 += 1
    chosen[0] = k0
    used[k0] = True
    cur = np.empty(n)
    for i in range(n):
        cur[i] = _cost(X, i, Z, k0, p)
    if M == 1:
        return chosen
    ub = np.empty(K)
    for k in range(K):
        ub[k] = _gain(X, w, Z, k, p, cur) if not used[k] else -1.0
    fresh = np.ones(K, np.bool_)
    for step in range(1, M):
        while True:
            # gains equal up to rounding count as ties, won by the lowest index
            mx = -np.inf
            for k in range(K):
                if not used[k] and ub[k] > mx:
                    mx = ub[k]
            tol = 1e-12 * abs(mx)
            kb = -1
            for k in range(K):
                if not used[k] and ub[k] >= mx - tol:
                    kb = k
                    break
            if fresh[kb]:
                break
            ub[kb] = _gain(X, w, Z, kb, p, cur)
            fresh[kb] = True
        chosen[step] = kb
        used[kb] = True
        for i in range(n):
            c = _cost(X, i, Z, kb, p)
            if c < cur[i]:
                cur[i] = c
        for k in range(K):
            fresh[k] = False
    return chosen


@njit(cache=True)
def greedy_minimax(X, owner, w_in_source, n_sources, Z, M, p):
    """Greedy selection minimizing the largest per-source transport cost.

    ``w_in_source`` are the particle weights within their own source
    (``1/|I_s|``).  Ties on the max are broken by the weighted sum of the
    per-source costs, then by candidate index.
    """
    n = X.shape[0]
    K = Z.shape[0]
    M = min(M, K)
    chosen = np.empty(M, np.int64)
    used = np.zeros(K, np.bool_)
    cur = np.full(n, np.inf)
    per = np.empty(n_sources)
    for step in range(M):
        best_max = np.inf
        best_sum = np.inf
        kb = -1
        for k in range(K):
            if used[k]:
                continue
            for s in range(n_sources):
                per[s] = 0.0
            for i in range(n):
                c = _cost(X, i, Z, k, p)
                if cur[i] < c:
                    c = cur[i]
                per[owner[i]] += w_in_source[i] * c
            mx = 0.0
            sm = 0.0
            for s in range(n_sources):
                sm += per[s]
                if per[s] > mx:
                    mx = per[s]
            if mx < best_max or (mx == best_max and sm < best_sum):
                best_max = mx
                best_sum = sm
                kb = k
        chosen[step] = kb
        used[kb] = True
        for i in range(n):
            c = _cost(X, i, Z, kb, p)
            if c < cur[i]:
                cur[i] = c
    return chosen


@njit(cache=True)
def lagrangian_rho(X, w, Z, p, u):
    """``rho_k = sum_i min(0, w_i d(x_i, z_k)^p - u_i)`` for every candidate."""
    K = Z.shape[0]
    rho = np.zeros(K)
    for k in range(K):
        s = 0.0
        for i in range(X.shape[0]):
            c = w[i] * _cost(X, i, Z, k, p) - u[i]
            if c < 0.0:
                s += c
        rho[k] = s
    return rho


@njit(cache=True)
def lagrangian_cover(X, w, Z, p, u, open_idx):
    """Number of open candidates priced below ``u_i`` for each particle."""
    n = X.shape[0]
    cnt = np.zeros(n)
    for i in range(n):
        for t in range(open_idx.shape[0]):
            if w[i] * _cost(X, i, Z, open_idx[t], p) < u[i]:
                cnt[i] += 1.0
    return cnt
