# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: LAP solve, SLIC sweeps, UMAP layout SGD.

Mirrors pykernels.py; see that module for the contracts. The UMAP kernel
reproduces the pure-Python float64 update sequence bit-for-bit (same
splitmix64 stream, same op order).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, ceil, floor, isfinite, pow

cnp.import_array()


# ---------------------------------------------------------------------------
# LAP
# ---------------------------------------------------------------------------


def lap_solve(cost_in):
    cost_arr = np.ascontiguousarray(cost_in, dtype=np.float64)
    if cost_arr.ndim != 2 or cost_arr.shape[0] != cost_arr.shape[1]:
        raise ValueError(f"lap_solve expects a square matrix, got {cost_arr.shape}")
    if cost_arr.shape[0] == 0:
        raise ValueError("lap_solve: empty cost matrix")
    if not np.all(np.isfinite(cost_arr)):
        raise ValueError("lap_solve: cost matrix contains non-finite values")

    cdef double[:, ::1] cost = cost_arr
    cdef Py_ssize_t n = cost.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] u_arr = np.zeros(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v_arr = np.zeros(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] shortest_arr = np.empty(n)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] path_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] col4row_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] row4col_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] remaining_arr = np.empty(n, dtype=np.uint8)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] in_sr_arr = np.empty(n, dtype=np.uint8)

    cdef double[::1] u = u_arr, v = v_arr, shortest = shortest_arr
    cdef long long[::1] path = path_arr, col4row = col4row_arr, row4col = row4col_arr
    cdef unsigned char[::1] remaining = remaining_arr, in_sr = in_sr_arr

    cdef Py_ssize_t cur_row, i, j, jj, r, sink, index
    cdef double min_val, lowest, reduced, total
    cdef bint index_free

    for cur_row in range(n):
        for j in range(n):
            shortest[j] = INFINITY
            remaining[j] = 1
            in_sr[j] = 0
        min_val = 0.0
        i = cur_row
        sink = -1
        while sink == -1:
            in_sr[i] = 1
            lowest = INFINITY
            index = -1
            index_free = False
            for j in range(n):
                if not remaining[j]:
                    continue
                reduced = min_val + cost[i, j] - u[i] - v[j]
                if reduced < shortest[j]:
                    shortest[j] = reduced
                    path[j] = i
                if shortest[j] < lowest:
                    lowest = shortest[j]
                    index = j
                    index_free = row4col[j] == -1
                elif shortest[j] == lowest and not index_free and row4col[j] == -1:
                    index = j
                    index_free = True
            min_val = lowest
            if not isfinite(min_val):
                raise ValueError("lap_solve: infeasible cost matrix")
            j = index
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
            remaining[j] = 0

        u[cur_row] += min_val
        for r in range(n):
            if in_sr[r] and r != cur_row:
                u[r] += min_val - shortest[col4row[r]]
        for jj in range(n):
            if not remaining[jj]:
                v[jj] -= min_val - shortest[jj]

        j = sink
        while True:
            r = path[j]
            row4col[j] = r
            jj = col4row[r]
            col4row[r] = j
            j = jj
            if r == cur_row:
                break

    total = 0.0
    for i in range(n):
        total += cost[i, col4row[i]]
    return col4row_arr, total


# ---------------------------------------------------------------------------
# SLIC
# ---------------------------------------------------------------------------


def slic_iterate(feat_in, centers_in, double spatial_scale, int window, int iters):
    feat_arr = np.ascontiguousarray(feat_in, dtype=np.float64)
    centers_arr = np.array(centers_in, dtype=np.float64)
    cdef double[:, :, ::1] feat = feat_arr
    cdef double[:, ::1] centers = centers_arr
    cdef Py_ssize_t h = feat.shape[0], w = feat.shape[1], s = centers.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=2] labels_arr = np.full((h, w), -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] best_arr = np.empty((h, w))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] acc_arr = np.zeros((s, 5))
    cdef cnp.ndarray[cnp.int64_t, ndim=1] count_arr = np.zeros(s, dtype=np.int64)
    cdef long long[:, ::1] labels = labels_arr
    cdef double[:, ::1] best = best_arr
    cdef double[:, ::1] acc = acc_arr
    cdef long long[::1] count = count_arr

    cdef Py_ssize_t it, k, r, c, r0, r1, c0, c1
    cdef double cr, cc, d, df0, df1, df2, dr, dc
    cdef long long lab

    for it in range(iters):
        for r in range(h):
            for c in range(w):
                best[r, c] = INFINITY
                labels[r, c] = -1
        for k in range(s):
            cr = centers[k, 3]
            cc = centers[k, 4]
            # symmetric bounds (|r - cr| <= window) keep the candidate set
            # invariant under 90-degree rotations of the input
            r0 = <Py_ssize_t>ceil(cr - window)
            r1 = <Py_ssize_t>floor(cr + window) + 1
            c0 = <Py_ssize_t>ceil(cc - window)
            c1 = <Py_ssize_t>floor(cc + window) + 1
            if r0 < 0:
                r0 = 0
            if c0 < 0:
                c0 = 0
            if r1 > h:
                r1 = h
            if c1 > w:
                c1 = w
            for r in range(r0, r1):
                dr = (r - cr) * (r - cr)
                for c in range(c0, c1):
                    df0 = feat[r, c, 0] - centers[k, 0]
                    df1 = feat[r, c, 1] - centers[k, 1]
                    df2 = feat[r, c, 2] - centers[k, 2]
                    dc = (c - cc) * (c - cc)
                    d = df0 * df0 + df1 * df1 + df2 * df2 + spatial_scale * (dr + dc)
                    if d < best[r, c]:
                        best[r, c] = d
                        labels[r, c] = k

        # orphans: nearest centroid globally
        for r in range(h):
            for c in range(w):
                if labels[r, c] != -1:
                    continue
                for k in range(s):
                    df0 = feat[r, c, 0] - centers[k, 0]
                    df1 = feat[r, c, 1] - centers[k, 1]
                    df2 = feat[r, c, 2] - centers[k, 2]
                    dr = (r - centers[k, 3]) * (r - centers[k, 3])
                    dc = (c - centers[k, 4]) * (c - centers[k, 4])
                    d = df0 * df0 + df1 * df1 + df2 * df2 + spatial_scale * (dr + dc)
                    if labels[r, c] == -1 or d < best[r, c]:
                        best[r, c] = d
                        labels[r, c] = k

        for k in range(s):
            count[k] = 0
            acc[k, 0] = acc[k, 1] = acc[k, 2] = acc[k, 3] = acc[k, 4] = 0.0
        for r in range(h):
            for c in range(w):
                lab = labels[r, c]
                acc[lab, 0] += feat[r, c, 0]
                acc[lab, 1] += feat[r, c, 1]
                acc[lab, 2] += feat[r, c, 2]
                acc[lab, 3] += r
                acc[lab, 4] += c
                count[lab] += 1
        for k in range(s):
            if count[k] > 0:
                centers[k, 0] = acc[k, 0] / count[k]
                centers[k, 1] = acc[k, 1] / count[k]
                centers[k, 2] = acc[k, 2] / count[k]
                centers[k, 3] = acc[k, 3] / count[k]
                centers[k, 4] = acc[k, 4] / count[k]

    return labels_arr, centers_arr


# ---------------------------------------------------------------------------
# UMAP layout SGD
# ---------------------------------------------------------------------------


cdef inline double _clip4(double x) nogil:
    if x > 4.0:
        return 4.0
    if x < -4.0:
        return -4.0
    return x


cdef inline unsigned long long _mix(unsigned long long z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def umap_optimize(positions, head_in, tail_in, epochs_per_sample, double a,
                  double b, double gamma, int negative_sample_rate,
                  double initial_alpha, int n_epochs, seed):
    pos_arr = np.ascontiguousarray(positions, dtype=np.float64)
    head_arr = np.ascontiguousarray(head_in, dtype=np.int64)
    tail_arr = np.ascontiguousarray(tail_in, dtype=np.int64)
    eps_arr = np.ascontiguousarray(epochs_per_sample, dtype=np.float64)
    next_arr = eps_arr.copy()
    eps_neg_arr = eps_arr / float(negative_sample_rate)
    next_neg_arr = eps_neg_arr.copy()

    cdef double[:, ::1] pos = pos_arr
    cdef long long[::1] head = head_arr, tail = tail_arr
    cdef double[::1] eps = eps_arr, nxt = next_arr
    cdef double[::1] eps_neg = eps_neg_arr, nxt_neg = next_neg_arr
    cdef Py_ssize_t n_edges = head.shape[0], n_vertices = pos.shape[0]
    cdef unsigned long long state = (<unsigned long long>seed) * 0x9E3779B97F4A7C15ULL + 1ULL
    cdef Py_ssize_t epoch, e, i, j, k, p, n_neg
    cdef double alpha, dx, dy, d2, coeff, gx, gy

    for epoch in range(n_epochs):
        alpha = initial_alpha * (1.0 - epoch / <double>n_epochs)
        for e in range(n_edges):
            if nxt[e] > epoch:
                continue
            i = head[e]
            j = tail[e]
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            d2 = dx * dx + dy * dy
            if d2 > 0.0:
                coeff = (-2.0 * a * b * pow(d2, b - 1.0)) / (a * pow(d2, b) + 1.0)
                gx = _clip4(coeff * dx) * alpha
                gy = _clip4(coeff * dy) * alpha
                pos[i, 0] += gx
                pos[i, 1] += gy
                pos[j, 0] -= gx
                pos[j, 1] -= gy
            nxt[e] += eps[e]

            n_neg = <Py_ssize_t>((epoch - nxt_neg[e]) / eps_neg[e])
            for p in range(n_neg):
                state = state + 0x9E3779B97F4A7C15ULL
                k = <Py_ssize_t>(_mix(state) % <unsigned long long>n_vertices)
                dx = pos[i, 0] - pos[k, 0]
                dy = pos[i, 1] - pos[k, 1]
                d2 = dx * dx + dy * dy
                if d2 > 0.0:
                    coeff = (2.0 * gamma * b) / ((0.001 + d2) * (a * pow(d2, b) + 1.0))
                    gx = _clip4(coeff * dx)
                    gy = _clip4(coeff * dy)
                elif i == k:
                    continue
                else:
                    gx = 4.0
                    gy = 4.0
                pos[i, 0] += gx * alpha
                pos[i, 1] += gy * alpha
            nxt_neg[e] += n_neg * eps_neg[e]

    positions[:] = pos_arr
    return positions
