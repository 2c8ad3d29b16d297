# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled loop kernels. Each function mirrors one in ``_pykernels`` bit for bit."""
import numpy as np

cimport numpy as cnp

cnp.import_array()


def concept_score(const double[:, :, ::1] adjs, const long[::1] set_a,
                  const long[::1] set_b, bint absolute=False):
    cdef Py_ssize_t m = adjs.shape[0]
    cdef Py_ssize_t na = set_a.shape[0]
    cdef Py_ssize_t nb = set_b.shape[0]
    cdef Py_ssize_t i, r, s
    cdef double n_edges = <double>(na * nb)
    cdef double total = 0.0
    cdef double sub, w
    if m == 0 or na == 0 or nb == 0:
        raise ValueError("concept_score needs at least one subject and one edge")
    for i in range(m):
        sub = 0.0
        for r in range(na):
            for s in range(nb):
                w = adjs[i, set_a[r], set_b[s]]
                if absolute and w < 0:
                    w = -w
                sub = sub + w
        total = total + sub / n_edges
    return total / <double>m


def avg_neighbor_degree(const unsigned char[:, ::1] binary):
    cdef Py_ssize_t n = binary.shape[0]
    cdef Py_ssize_t u, v
    cdef long long[::1] deg = np.zeros(n, dtype=np.int64)
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] res = out
    cdef long long acc
    # integer accumulation is exact, so the result matches the float matmul twin bit for bit
    for u in range(n):
        acc = 0
        for v in range(n):
            acc = acc + (binary[u, v] != 0)
        deg[u] = acc
    for u in range(n):
        if deg[u] == 0:
            continue
        acc = 0
        for v in range(n):
            acc = acc + (binary[u, v] != 0) * deg[v]
        res[u] = <double>acc / <double>deg[u]
    return out


def bipartite_block(const double[:, ::1] adj, const long[::1] set_a,
                    const long[::1] set_b, double tau):
    cdef Py_ssize_t na = set_a.shape[0]
    cdef Py_ssize_t nb = set_b.shape[0]
    cdef Py_ssize_t r, s, k = 0
    cdef double w, acc
    deg_np = np.zeros(na + nb, dtype=np.float64)
    feat_np = np.zeros(na + nb, dtype=np.float64)
    cdef double[::1] deg = deg_np
    cdef double[::1] feat = feat_np
    mask_np = np.zeros((na, nb), dtype=np.uint8)
    cdef unsigned char[:, ::1] mask = mask_np
    for r in range(na):
        for s in range(nb):
            w = adj[set_a[r], set_b[s]]
            if w >= tau or -w >= tau:
                mask[r, s] = 1
                deg[r] = deg[r] + 1.0
                deg[na + s] = deg[na + s] + 1.0
                k += 1
    for r in range(na):
        if deg[r] == 0.0:
            continue
        acc = 0.0
        for s in range(nb):
            if mask[r, s]:
                acc = acc + deg[na + s]
        feat[r] = acc / deg[r]
    for s in range(nb):
        if deg[na + s] == 0.0:
            continue
        acc = 0.0
        for r in range(na):
            if mask[r, s]:
                acc = acc + deg[r]
        feat[na + s] = acc / deg[na + s]
    rows_np = np.empty(2 * k, dtype=np.int64)
    cols_np = np.empty(2 * k, dtype=np.int64)
    vals_np = np.empty(2 * k, dtype=np.float64)
    cdef long[::1] rows = rows_np
    cdef long[::1] cols = cols_np
    cdef double[::1] vals = vals_np
    cdef Py_ssize_t e = 0
    for r in range(na):
        for s in range(nb):
            if mask[r, s]:
                rows[e] = r
                cols[e] = na + s
                vals[e] = adj[set_a[r], set_b[s]] / deg[r]
                e += 1
    for s in range(nb):
        for r in range(na):
            if mask[r, s]:
                rows[e] = na + s
                cols[e] = r
                vals[e] = adj[set_a[r], set_b[s]] / deg[na + s]
                e += 1
    return feat_np, rows_np, cols_np, vals_np
