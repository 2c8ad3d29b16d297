"""Pure-Python/numpy versions of the compiled kernels.

Results are bitwise identical to ``_ckernels``: every floating-point sum runs
in the same order as the compiled loops.
"""
import numpy as np


def concept_score(adjs, set_a, set_b, absolute=False):
    m = adjs.shape[0]
    if m == 0 or len(set_a) == 0 or len(set_b) == 0:
        raise ValueError("concept_score needs at least one subject and one edge")
    n_edges = float(len(set_a) * len(set_b))
    rows = [int(r) for r in set_a]
    cols = [int(s) for s in set_b]
    total = 0.0
    for i in range(m):
        a = adjs[i]
        sub = 0.0
        for r in rows:
            row = a[r]
            for s in cols:
                w = float(row[s])
                if absolute and w < 0:
                    w = -w
                sub = sub + w
        total = total + sub / n_edges
    return total / float(m)


def avg_neighbor_degree(binary):
    b = np.asarray(binary, dtype=bool)
    deg = b.sum(axis=1).astype(np.float64)
    # integer-valued sums are exact, so matmul order does not matter here
    nbr = b.astype(np.float64) @ deg
    out = np.zeros(b.shape[0], dtype=np.float64)
    nz = deg > 0
    out[nz] = nbr[nz] / deg[nz]
    return out


def bipartite_block(adj, set_a, set_b, tau):
    na, nb = len(set_a), len(set_b)
    sub = adj[np.ix_(set_a, set_b)]
    mask = np.abs(sub) >= tau
    deg_a = mask.sum(axis=1).astype(np.float64)
    deg_b = mask.sum(axis=0).astype(np.float64)
    feat = np.zeros(na + nb, dtype=np.float64)
    fa = mask.astype(np.float64) @ deg_b
    fb = mask.T.astype(np.float64) @ deg_a
    feat[:na][deg_a > 0] = fa[deg_a > 0] / deg_a[deg_a > 0]
    feat[na:][deg_b > 0] = fb[deg_b > 0] / deg_b[deg_b > 0]
    r_ab, s_ab = np.nonzero(mask)
    s_ba, r_ba = np.nonzero(mask.T)
    rows = np.concatenate([r_ab, na + s_ba]).astype(np.int64)
    cols = np.concatenate([na + s_ab, r_ba]).astype(np.int64)
    vals = np.concatenate([sub[r_ab, s_ab] / deg_a[r_ab], sub[r_ba, s_ba] / deg_b[s_ba]])
    return feat, rows, cols, vals
