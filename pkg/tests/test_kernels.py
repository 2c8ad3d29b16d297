import importlib
import os
import subprocess
import sys

import networkx as nx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conceptneuro import _pykernels, kernels

try:
    from conceptneuro import _ckernels
except ImportError:  # extension not built
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def _sym(m):
    a = np.clip((m + m.T) / 2, -1, 1)
    np.fill_diagonal(a, 0.0)
    return a


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")
    if _ckernels is not None and not os.environ.get("CONCEPTNEURO_PURE_PYTHON"):
        assert kernels.BACKEND == "cython"


def test_env_var_forces_fallback():
    code = "import conceptneuro.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, CONCEPTNEURO_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_concept_score_hand_values():
    a = np.zeros((1, 3, 3))
    a[0, 0, 1] = a[0, 1, 0] = 0.4
    a[0, 0, 2] = a[0, 2, 0] = 0.2
    assert kernels.concept_score(a, [0], [1, 2]) == pytest.approx(0.3, abs=1e-15)
    b = np.zeros((2, 2, 2))
    b[0, 0, 1] = b[0, 1, 0] = 0.3
    b[1, 0, 1] = b[1, 1, 0] = 0.1
    assert kernels.concept_score(b, [0], [1]) == pytest.approx(0.2, abs=1e-15)
    with pytest.raises(ValueError):
        kernels.concept_score(b[:0], [0], [1])


def test_neighbor_degree_small_graphs():
    tri = np.ones((3, 3), dtype=np.uint8) - np.eye(3, dtype=np.uint8)
    assert kernels.avg_neighbor_degree(tri).tolist() == [2.0, 2.0, 2.0]
    path = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=np.uint8)
    assert kernels.avg_neighbor_degree(path).tolist() == [2.0, 1.0, 2.0]
    assert kernels.avg_neighbor_degree(np.zeros((2, 2), dtype=np.uint8)).tolist() == [0.0, 0.0]


@given(arrays(np.uint8, (7, 7), elements=st.integers(0, 1)))
def test_neighbor_degree_matches_networkx(m):
    b = np.triu(m, 1)
    b = b + b.T
    g = nx.from_numpy_array(b)
    ref = nx.average_neighbor_degree(g)
    got = kernels.avg_neighbor_degree(b)
    assert got.tolist() == [float(ref[i]) for i in range(7)]


def test_bipartite_block_structure():
    adj = np.zeros((4, 4))
    adj[0, 2] = adj[2, 0] = 0.5
    adj[0, 3] = adj[3, 0] = -0.4
    adj[1, 2] = adj[2, 1] = 0.1
    feat, rows, cols, vals = kernels.bipartite_block(adj, [0, 1], [2, 3], 0.3)
    # local nodes: 0,1 | 2,3; edges 0-2 and 0-3 survive tau
    assert feat.tolist() == [1.0, 0.0, 2.0, 2.0]
    edges = {(int(r), int(c)): v for r, c, v in zip(rows, cols, vals)}
    assert edges == {(0, 2): 0.25, (0, 3): -0.2, (2, 0): 0.5, (3, 0): -0.4}


@needs_ext
@given(arrays(np.float64, (3, 8, 8), elements=st.floats(-1, 1)),
       st.lists(st.integers(0, 7), min_size=1, max_size=4, unique=True),
       st.booleans())
def test_concept_score_twins_bitwise(m, nodes, absolute):
    adjs = np.stack([_sym(x) for x in m])
    rest = [i for i in range(8) if i not in nodes][:3]
    c = _ckernels.concept_score(adjs, np.array(nodes, dtype=np.int64), np.array(rest, dtype=np.int64), absolute)
    p = _pykernels.concept_score(adjs, np.array(nodes), np.array(rest), absolute)
    assert c == p


@needs_ext
@given(arrays(np.uint8, (9, 9), elements=st.integers(0, 1)))
def test_neighbor_degree_twins_bitwise(m):
    b = np.triu(m, 1)
    b = np.ascontiguousarray(b + b.T)
    assert np.array_equal(_ckernels.avg_neighbor_degree(b), _pykernels.avg_neighbor_degree(b))


@needs_ext
@given(arrays(np.float64, (8, 8), elements=st.floats(-1, 1)), st.floats(0.05, 0.95),
       st.permutations(range(8)), st.integers(1, 4))
def test_bipartite_block_twins_bitwise(m, tau, perm, cut):
    adj = _sym(m)
    a = np.array(sorted(perm[:cut]), dtype=np.int64)
    b = np.array(sorted(perm[cut:cut + 3]), dtype=np.int64)
    for x, y in zip(_ckernels.bipartite_block(adj, a, b, tau), _pykernels.bipartite_block(adj, a, b, tau)):
        assert x.dtype == y.dtype and np.array_equal(x, y)


def test_reload_keeps_backend():
    mod = importlib.reload(kernels)
    assert mod.BACKEND in ("cython", "python")
