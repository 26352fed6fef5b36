"""Pure-Python reference kernels.

These mirror the compiled kernels in ``_ckernels.pyx`` operation for
operation, so both backends return bit-identical results.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def llt_conjugate_1d(x, v, s):
    """Discrete Legendre transform of one grid line in linear time.

    Parameters
    ----------
    x : ndarray
        Ascending primal nodes.
    v : ndarray
        Values at ``x``; ``inf`` marks nodes outside the domain.
    s : ndarray
        Ascending dual nodes.

    Returns
    -------
    vals : ndarray
        ``max_i x_i*s_j - v_i``; ``-inf`` when every ``v`` is infinite.
    arg : ndarray of intp
        Maximizing primal index (smallest on ties), ``-1`` if none.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    s = np.ascontiguousarray(s, dtype=np.float64)
    ns = s.shape[0]
    vals = np.full(ns, -np.inf)
    arg = np.full(ns, -1, dtype=np.intp)

    hull = []
    for i in range(x.shape[0]):
        vi = v[i]
        if vi == np.inf:
            continue
        while len(hull) >= 2:
            a = hull[-2]
            b = hull[-1]
            # drop b when it lies on or above the chord a -> i
            if (v[b] - v[a]) * (x[i] - x[a]) >= (vi - v[a]) * (x[b] - x[a]):
                hull.pop()
            else:
                break
        hull.append(i)
    if not hull:
        return vals, arg

    k = 0
    nh = len(hull)
    for j in range(ns):
        sj = s[j]
        while k + 1 < nh:
            cur = x[hull[k]] * sj - v[hull[k]]
            nxt = x[hull[k + 1]] * sj - v[hull[k + 1]]
            if nxt > cur:
                k += 1
            else:
                break
        vals[j] = x[hull[k]] * sj - v[hull[k]]
        arg[j] = hull[k]
    return vals, arg


def _tree_potentials(m, n, brow, bcol, C):
    """Dual potentials and BFS parent links of the basis tree rooted at row 0."""
    nn = m + n
    nb = brow.shape[0]
    deg = np.zeros(nn + 1, dtype=np.intp)
    for k in range(nb):
        deg[brow[k] + 1] += 1
        deg[m + bcol[k] + 1] += 1
    start = np.cumsum(deg)
    fill = start[:-1].copy()
    adj = np.empty(2 * nb, dtype=np.intp)
    for k in range(nb):
        r = brow[k]
        c = m + bcol[k]
        adj[fill[r]] = k
        fill[r] += 1
        adj[fill[c]] = k
        fill[c] += 1

    pot = np.zeros(nn)
    parent_cell = np.full(nn, -1, dtype=np.intp)
    parent = np.full(nn, -1, dtype=np.intp)
    depth = np.full(nn, -1, dtype=np.intp)
    queue = np.empty(nn, dtype=np.intp)
    queue[0] = 0
    depth[0] = 0
    head, tail = 0, 1
    while head < tail:
        node = queue[head]
        head += 1
        for p in range(start[node], start[node + 1]):
            k = adj[p]
            r = brow[k]
            c = m + bcol[k]
            other = c if node == r else r
            if depth[other] >= 0:
                continue
            # u_i + v_j = c_ij on basic cells
            pot[other] = C[brow[k], bcol[k]] - pot[node]
            depth[other] = depth[node] + 1
            parent[other] = node
            parent_cell[other] = k
            queue[tail] = other
            tail += 1
    return pot, parent, parent_cell, depth


def _leaf_flows(m, n, brow, bcol, a, b):
    """Basic flows for supplies ``a`` and demands ``b`` by leaf peeling."""
    nn = m + n
    nb = brow.shape[0]
    rem = np.concatenate([a, b]).astype(np.float64)
    deg = np.zeros(nn, dtype=np.intp)
    for k in range(nb):
        deg[brow[k]] += 1
        deg[m + bcol[k]] += 1
    done = np.zeros(nb, dtype=bool)
    flow = np.zeros(nb)
    # incident cells per node
    inc = [[] for _ in range(nn)]
    for k in range(nb):
        inc[brow[k]].append(k)
        inc[m + bcol[k]].append(k)
    stack = [node for node in range(nn - 1, -1, -1) if deg[node] == 1]
    while stack:
        node = stack.pop()
        if deg[node] != 1:
            continue
        for k in inc[node]:
            if not done[k]:
                break
        else:
            continue
        done[k] = True
        flow[k] = rem[node]
        r = brow[k]
        c = m + bcol[k]
        other = c if node == r else r
        rem[other] -= rem[node]
        rem[node] = 0.0
        deg[node] -= 1
        deg[other] -= 1
        if deg[other] == 1:
            stack.append(other)
    return flow


def network_simplex(a, b, C, max_iter=0, eps_scale=1e-9):
    """Minimum-cost transportation by the primal network simplex.

    Parameters
    ----------
    a, b : ndarray
        Nonnegative supplies and demands with equal totals.
    C : ndarray, shape (m, n)
        Cost matrix.
    max_iter : int
        Pivot cap; ``0`` selects ``50*m*n + 1000``.

    Entering cells are chosen by block search: cells are scanned cyclically
    in blocks of ``max(16, sqrt(m*n))`` and the most negative reduced cost
    of the first block that has one enters.
    eps_scale : float
        Relative size of the anti-degeneracy perturbation.

    Returns
    -------
    brow, bcol : ndarray of intp
        Basis cells (a spanning tree with ``m+n-1`` cells).
    flow : ndarray
        Flows on the basis cells for the unperturbed data.
    u, v : ndarray
        Row and column potentials with ``u_i + v_j = C_ij`` on the basis.
    n_iter : int
        Pivots performed.
    status : int
        ``0`` optimal, ``1`` pivot cap reached.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    C = np.ascontiguousarray(C, dtype=np.float64)
    m, n = C.shape
    nb = m + n - 1
    if max_iter <= 0:
        max_iter = 50 * m * n + 1000
    total = a.sum()
    eps = eps_scale * total / (m + n)
    ap = a + eps
    bp = b.copy()
    bp[n - 1] += m * eps

    # north-west corner start
    brow = np.empty(nb, dtype=np.intp)
    bcol = np.empty(nb, dtype=np.intp)
    flow = np.empty(nb)
    i = j = 0
    ra = ap[0]
    rb = bp[0]
    for k in range(nb):
        brow[k] = i
        bcol[k] = j
        if k == nb - 1:
            flow[k] = ra
        elif (ra < rb and i < m - 1) or j == n - 1:
            flow[k] = ra
            rb -= ra
            i += 1
            ra = ap[i]
        else:
            flow[k] = rb
            ra -= rb
            j += 1
            rb = bp[j]

    cmax = np.abs(C).max() if C.size else 0.0
    tol = 1e-12 * (1.0 + cmax)
    n_iter = 0
    status = 1
    mn = m * n
    block = max(16, int(np.sqrt(mn)))
    ptr = 0
    while n_iter < max_iter:
        pot, parent, parent_cell, depth = _tree_potentials(m, n, brow, bcol, C)
        u = pot[:m]
        v = pot[m:]
        red = (C - u[:, None] - v[None, :]).ravel()
        # block search: best cell of the first block holding a negative one
        flat = -1
        scanned = 0
        while scanned < mn:
            size = min(block, mn - scanned)
            idx = (ptr + scanned + np.arange(size)) % mn
            k = int(np.argmin(red[idx]))
            scanned += size
            if red[idx[k]] < -tol:
                flat = int(idx[k])
                break
        if flat < 0:
            status = 0
            break
        ptr = (ptr + scanned) % mn
        ei, ej = divmod(flat, n)

        # tree path row ei -> col ej, cells alternate minus/plus
        p = ei
        q = m + ej
        up_p = []
        up_q = []
        while depth[p] > depth[q]:
            up_p.append(parent_cell[p])
            p = parent[p]
        while depth[q] > depth[p]:
            up_q.append(parent_cell[q])
            q = parent[q]
        while p != q:
            up_p.append(parent_cell[p])
            p = parent[p]
            up_q.append(parent_cell[q])
            q = parent[q]
        path = up_p + up_q[::-1]

        theta = np.inf
        leave = -1
        for t in range(0, len(path), 2):
            k = path[t]
            if flow[k] < theta:
                theta = flow[k]
                leave = t
        for t in range(len(path)):
            k = path[t]
            if t % 2 == 0:
                flow[k] -= theta
            else:
                flow[k] += theta
        kl = path[leave]
        brow[kl] = ei
        bcol[kl] = ej
        flow[kl] = theta
        n_iter += 1

    pot, _, _, _ = _tree_potentials(m, n, brow, bcol, C)
    flow = _leaf_flows(m, n, brow, bcol, a, b)
    return brow, bcol, flow, pot[:m].copy(), pot[m:].copy(), n_iter, status
