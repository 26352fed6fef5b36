# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: linear-time 1D conjugate and transportation simplex.

Same algorithms, same operation order as ``_pykernels``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, fabs, sqrt

cnp.import_array()

BACKEND = "cython"


def llt_conjugate_1d(x, v, s):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef const double[::1] sv = np.ascontiguousarray(s, dtype=np.float64)
    cdef Py_ssize_t nx = xv.shape[0]
    cdef Py_ssize_t ns = sv.shape[0]
    vals_arr = np.full(ns, -np.inf)
    arg_arr = np.full(ns, -1, dtype=np.intp)
    cdef double[::1] vals = vals_arr
    cdef Py_ssize_t[::1] arg = arg_arr
    hull_arr = np.empty(max(nx, 1), dtype=np.intp)
    cdef Py_ssize_t[::1] hull = hull_arr
    cdef Py_ssize_t nh = 0, i, j, k, a, b
    cdef double vi, sj, cur, nxt

    for i in range(nx):
        vi = vv[i]
        if vi == INFINITY:
            continue
        while nh >= 2:
            a = hull[nh - 2]
            b = hull[nh - 1]
            if (vv[b] - vv[a]) * (xv[i] - xv[a]) >= (vi - vv[a]) * (xv[b] - xv[a]):
                nh -= 1
            else:
                break
        hull[nh] = i
        nh += 1
    if nh == 0:
        return vals_arr, arg_arr

    k = 0
    for j in range(ns):
        sj = sv[j]
        while k + 1 < nh:
            cur = xv[hull[k]] * sj - vv[hull[k]]
            nxt = xv[hull[k + 1]] * sj - vv[hull[k + 1]]
            if nxt > cur:
                k += 1
            else:
                break
        vals[j] = xv[hull[k]] * sj - vv[hull[k]]
        arg[j] = hull[k]
    return vals_arr, arg_arr


cdef void _build_adj(Py_ssize_t m, Py_ssize_t n, Py_ssize_t nb,
                     Py_ssize_t[::1] brow, Py_ssize_t[::1] bcol,
                     Py_ssize_t[::1] start, Py_ssize_t[::1] fill,
                     Py_ssize_t[::1] adj) noexcept nogil:
    cdef Py_ssize_t nn = m + n, k, r, c
    for k in range(nn + 1):
        start[k] = 0
    for k in range(nb):
        start[brow[k] + 1] += 1
        start[m + bcol[k] + 1] += 1
    for k in range(nn):
        start[k + 1] += start[k]
    for k in range(nn):
        fill[k] = start[k]
    for k in range(nb):
        r = brow[k]
        c = m + bcol[k]
        adj[fill[r]] = k
        fill[r] += 1
        adj[fill[c]] = k
        fill[c] += 1


cdef void _tree_potentials(Py_ssize_t m, Py_ssize_t n, Py_ssize_t nb,
                           Py_ssize_t[::1] brow, Py_ssize_t[::1] bcol,
                           const double[:, ::1] C,
                           Py_ssize_t[::1] start, Py_ssize_t[::1] fill,
                           Py_ssize_t[::1] adj,
                           double[::1] pot, Py_ssize_t[::1] parent,
                           Py_ssize_t[::1] parent_cell, Py_ssize_t[::1] depth,
                           Py_ssize_t[::1] queue) noexcept nogil:
    cdef Py_ssize_t nn = m + n, node, other, p, k, r, c, head, tail
    _build_adj(m, n, nb, brow, bcol, start, fill, adj)
    for k in range(nn):
        pot[k] = 0.0
        parent[k] = -1
        parent_cell[k] = -1
        depth[k] = -1
    queue[0] = 0
    depth[0] = 0
    head = 0
    tail = 1
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
            pot[other] = C[brow[k], bcol[k]] - pot[node]
            depth[other] = depth[node] + 1
            parent[other] = node
            parent_cell[other] = k
            queue[tail] = other
            tail += 1


cdef void _leaf_flows(Py_ssize_t m, Py_ssize_t n, Py_ssize_t nb,
                      Py_ssize_t[::1] brow, Py_ssize_t[::1] bcol,
                      const double[::1] a, const double[::1] b,
                      Py_ssize_t[::1] start, Py_ssize_t[::1] fill,
                      Py_ssize_t[::1] adj, double[::1] flow,
                      double[::1] rem, Py_ssize_t[::1] deg,
                      unsigned char[::1] done,
                      Py_ssize_t[::1] stack) noexcept nogil:
    cdef Py_ssize_t nn = m + n, node, k, p, r, c, other, top, found
    _build_adj(m, n, nb, brow, bcol, start, fill, adj)
    for k in range(m):
        rem[k] = a[k]
    for k in range(n):
        rem[m + k] = b[k]
    for k in range(nn):
        deg[k] = start[k + 1] - start[k]
    for k in range(nb):
        done[k] = 0
        flow[k] = 0.0
    top = 0
    for node in range(nn - 1, -1, -1):
        if deg[node] == 1:
            stack[top] = node
            top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        if deg[node] != 1:
            continue
        found = -1
        for p in range(start[node], start[node + 1]):
            if not done[adj[p]]:
                found = adj[p]
                break
        if found < 0:
            continue
        k = found
        done[k] = 1
        flow[k] = rem[node]
        r = brow[k]
        c = m + bcol[k]
        other = c if node == r else r
        rem[other] -= rem[node]
        rem[node] = 0.0
        deg[node] -= 1
        deg[other] -= 1
        if deg[other] == 1:
            stack[top] = other
            top += 1


def network_simplex(a, b, C, Py_ssize_t max_iter=0, double eps_scale=1e-9):
    cdef const double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    C_arr = np.ascontiguousarray(C, dtype=np.float64)
    cdef const double[:, ::1] Cv = C_arr
    cdef Py_ssize_t m = Cv.shape[0], n = Cv.shape[1]
    cdef Py_ssize_t nb = m + n - 1, nn = m + n
    if max_iter <= 0:
        max_iter = 50 * m * n + 1000
    cdef double total = 0.0
    cdef Py_ssize_t i, j, k, t, ei, ej, p, q, npath, nup, nuq, leave, kl
    for i in range(m):
        total += av[i]
    cdef double eps = eps_scale * total / (m + n)
    ap_arr = np.empty(m)
    bp_arr = np.empty(n)
    cdef double[::1] ap = ap_arr
    cdef double[::1] bp = bp_arr
    for i in range(m):
        ap[i] = av[i] + eps
    for j in range(n):
        bp[j] = bv[j]
    bp[n - 1] += m * eps

    brow_arr = np.empty(nb, dtype=np.intp)
    bcol_arr = np.empty(nb, dtype=np.intp)
    flow_arr = np.empty(nb)
    cdef Py_ssize_t[::1] brow = brow_arr
    cdef Py_ssize_t[::1] bcol = bcol_arr
    cdef double[::1] flow = flow_arr
    cdef double ra, rb
    i = 0
    j = 0
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

    start_arr = np.empty(nn + 1, dtype=np.intp)
    fill_arr = np.empty(nn, dtype=np.intp)
    adj_arr = np.empty(2 * nb, dtype=np.intp)
    pot_arr = np.empty(nn)
    parent_arr = np.empty(nn, dtype=np.intp)
    pcell_arr = np.empty(nn, dtype=np.intp)
    depth_arr = np.empty(nn, dtype=np.intp)
    queue_arr = np.empty(nn, dtype=np.intp)
    path_arr = np.empty(2 * nn, dtype=np.intp)
    upq_arr = np.empty(nn, dtype=np.intp)
    cdef Py_ssize_t[::1] start = start_arr
    cdef Py_ssize_t[::1] fill = fill_arr
    cdef Py_ssize_t[::1] adj = adj_arr
    cdef double[::1] pot = pot_arr
    cdef Py_ssize_t[::1] parent = parent_arr
    cdef Py_ssize_t[::1] pcell = pcell_arr
    cdef Py_ssize_t[::1] depth = depth_arr
    cdef Py_ssize_t[::1] queue = queue_arr
    cdef Py_ssize_t[::1] path = path_arr
    cdef Py_ssize_t[::1] upq = upq_arr

    cdef double cmax = 0.0, tol, rmin, r, theta
    for i in range(m):
        for j in range(n):
            if fabs(Cv[i, j]) > cmax:
                cmax = fabs(Cv[i, j])
    tol = 1e-12 * (1.0 + cmax)
    cdef Py_ssize_t n_iter = 0
    cdef int status = 1
    cdef Py_ssize_t mn = m * n, scanned, size, cell, ptr = 0
    cdef Py_ssize_t block = <Py_ssize_t>sqrt(<double>(m * n))
    cdef int found
    if block < 16:
        block = 16

    with nogil:
        while n_iter < max_iter:
            _tree_potentials(m, n, nb, brow, bcol, Cv, start, fill, adj,
                             pot, parent, pcell, depth, queue)
            rmin = INFINITY
            ei = 0
            ej = 0
            scanned = 0
            found = 0
            while scanned < mn:
                size = block if block < mn - scanned else mn - scanned
                for t in range(size):
                    cell = (ptr + scanned + t) % mn
                    i = cell // n
                    j = cell - i * n
                    r = Cv[i, j] - pot[i] - pot[m + j]
                    if r < rmin:
                        rmin = r
                        ei = i
                        ej = j
                scanned += size
                if rmin < -tol:
                    found = 1
                    break
            if not found:
                status = 0
                break
            ptr = (ptr + scanned) % mn

            p = ei
            q = m + ej
            nup = 0
            nuq = 0
            while depth[p] > depth[q]:
                path[nup] = pcell[p]
                nup += 1
                p = parent[p]
            while depth[q] > depth[p]:
                upq[nuq] = pcell[q]
                nuq += 1
                q = parent[q]
            while p != q:
                path[nup] = pcell[p]
                nup += 1
                p = parent[p]
                upq[nuq] = pcell[q]
                nuq += 1
                q = parent[q]
            npath = nup
            for t in range(nuq - 1, -1, -1):
                path[npath] = upq[t]
                npath += 1

            theta = INFINITY
            leave = -1
            for t in range(0, npath, 2):
                k = path[t]
                if flow[k] < theta:
                    theta = flow[k]
                    leave = t
            for t in range(npath):
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

    _tree_potentials(m, n, nb, brow, bcol, Cv, start, fill, adj,
                     pot, parent, pcell, depth, queue)
    rem_arr = np.empty(nn)
    deg_arr = np.empty(nn, dtype=np.intp)
    done_arr = np.empty(nb, dtype=np.uint8)
    stack_arr = np.empty(nn, dtype=np.intp)
    out_flow = np.empty(nb)
    _leaf_flows(m, n, nb, brow, bcol, av, bv, start, fill, adj, out_flow,
                rem_arr, deg_arr, done_arr, stack_arr)
    return (brow_arr, bcol_arr, out_flow, pot_arr[:m].copy(),
            pot_arr[m:].copy(), int(n_iter), int(status))
