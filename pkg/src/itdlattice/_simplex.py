"""Transportation simplex (u-v / MODI method) on a dense cost matrix.

The basis is kept as a spanning tree over ``n`` row nodes and ``m`` column
nodes (column ``j`` is node ``n + j``).  Every pivot rebuilds the tree
adjacency, which is O(n + m) and cheap next to the O(n m) pricing scan.
"""

import numpy as np
from numba import njit

# Consecutive degenerate pivots tolerated before switching to Bland's rule.
_DEGENERATE_LIMIT = 50


@njit(cache=True)
def _northwest_corner(a, b):
    n = a.shape[0]
    m = b.shape[0]
    nb = n + m - 1
    bi = np.empty(nb, np.int64)
    bj = np.empty(nb, np.int64)
    flow = np.empty(nb, np.float64)
    ra = a.copy()
    rb = b.copy()
    i = 0
    j = 0
    k = 0
    while k < nb:
        q = min(ra[i], rb[j])
        if q < 0.0:
            q = 0.0
        bi[k] = i
        bj[k] = j
        flow[k] = q
        ra[i] -= q
        rb[j] -= q
        k += 1
        if i == n - 1:
            j += 1
        elif j == m - 1:
            i += 1
        elif ra[i] <= rb[j]:
            i += 1
        else:
            j += 1
    return bi, bj, flow


@njit(cache=True)
def _build_tree(n, m, bi, bj, parent, parent_cell, depth, order):
    """Root the basis tree at row 0; fill parent/depth and BFS order."""
    nn = n + m
    deg = np.zeros(nn + 1, np.int64)
    nb = bi.shape[0]
    for k in range(nb):
        deg[bi[k] + 1] += 1
        deg[n + bj[k] + 1] += 1
    for v in range(nn):
        deg[v + 1] += deg[v]
    adj_node = np.empty(2 * nb, np.int64)
    adj_cell = np.empty(2 * nb, np.int64)
    fill = deg[:nn].copy()
    for k in range(nb):
        r = bi[k]
        c = n + bj[k]
        adj_node[fill[r]] = c
        adj_cell[fill[r]] = k
        fill[r] += 1
        adj_node[fill[c]] = r
        adj_cell[fill[c]] = k
        fill[c] += 1
    for v in range(nn):
        parent[v] = -2
    parent[0] = -1
    parent_cell[0] = -1
    depth[0] = 0
    order[0] = 0
    head = 0
    tail = 1
    while head < tail:
        v = order[head]
        head += 1
        for e in range(deg[v], deg[v + 1]):
            w = adj_node[e]
            if parent[w] == -2:
                parent[w] = v
                parent_cell[w] = adj_cell[e]
                depth[w] = depth[v] + 1
                order[tail] = w
                tail += 1
    return tail


@njit(cache=True)
def transport_simplex(a, b, C, max_iter, tol):
    """Solve ``min <C, P>`` over couplings of ``a`` and ``b``.

    Returns ``(bi, bj, flow, u, v, status, n_pivots)``; ``status`` is 0 when
    optimal, 1 when ``max_iter`` was hit and 2 if the basis degenerated into
    a forest (should not happen).
    """
    n = a.shape[0]
    m = b.shape[0]
    nn = n + m
    bi, bj, flow = _northwest_corner(a, b)
    parent = np.empty(nn, np.int64)
    parent_cell = np.empty(nn, np.int64)
    depth = np.empty(nn, np.int64)
    order = np.empty(nn, np.int64)
    pot = np.zeros(nn, np.float64)
    sign = np.zeros(bi.shape[0], np.int8)
    degenerate_run = 0
    block = max(int(np.sqrt(n * m)), 16)
    cursor = 0
    status = 1
    it = 0
    while it < max_iter:
        reached = _build_tree(n, m, bi, bj, parent, parent_cell, depth, order)
        if reached != nn:
            status = 2
            break
        # potentials: u_i + v_j = C_ij on basic cells
        pot[0] = 0.0
        for h in range(1, nn):
            w = order[h]
            k = parent_cell[w]
            if w < n:
                pot[w] = C[w, bj[k]] - pot[n + bj[k]]
            else:
                pot[w] = C[bi[k], w - n] - pot[bi[k]]
        # block-search pricing: scan cells in cyclic blocks and take the
        # most negative reduced cost of the first block that has one;
        # Bland mode takes the first negative cell in index order instead
        best = -tol
        ei = -1
        ej = -1
        use_bland = degenerate_run > _DEGENERATE_LIMIT
        total = n * m
        if use_bland:
            for c in range(total):
                i = c // m
                j = c - i * m
                if C[i, j] - pot[i] - pot[n + j] < -tol:
                    ei = i
                    ej = j
                    break
        else:
            scanned = 0
            c = cursor
            while scanned < total:
                stop = min(block, total - scanned)
                for _ in range(stop):
                    i = c // m
                    j = c - i * m
                    rc = C[i, j] - pot[i] - pot[n + j]
                    if rc < best:
                        best = rc
                        ei = i
                        ej = j
                    c += 1
                    if c == total:
                        c = 0
                scanned += stop
                if ei >= 0:
                    break
            cursor = c
        if ei < 0:
            status = 0
            break
        # cycle through the tree path between row ei and column ej
        for k in range(sign.shape[0]):
            sign[k] = 0
        x = ei
        y = n + ej
        # walking up from the row end: first edge at row ei gets '-'
        # (entering cell is '+', so cells alternate along the path)
        px = 0
        py = 0
        while x != y:
            if depth[x] >= depth[y]:
                k = parent_cell[x]
                sign[k] = 1 + (px & 1)  # 1 -> '-', 2 -> '+'
                px += 1
                x = parent[x]
            else:
                k = parent_cell[y]
                sign[k] = 1 + (py & 1)
                py += 1
                y = parent[y]
        theta = np.inf
        leave = -1
        for k in range(sign.shape[0]):
            if sign[k] == 1:
                if flow[k] < theta or (flow[k] == theta and k < leave):
                    theta = flow[k]
                    leave = k
        if theta < 0.0:
            theta = 0.0
        for k in range(sign.shape[0]):
            if sign[k] == 1:
                flow[k] -= theta
            elif sign[k] == 2:
                flow[k] += theta
        if theta <= 0.0:
            degenerate_run += 1
        else:
            degenerate_run = 0
        bi[leave] = ei
        bj[leave] = ej
        flow[leave] = theta
        it += 1
    u = pot[:n].copy()
    v = pot[n:].copy()
    return bi, bj, flow, u, v, status, it
