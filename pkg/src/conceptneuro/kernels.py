"""Loop kernels, compiled when available.

The Cython extension ``_ckernels`` is used if it was built and
``CONCEPTNEURO_PURE_PYTHON`` is unset; otherwise the numpy/pure-Python twins in
``_pykernels`` are used. Both produce bitwise-identical results.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("CONCEPTNEURO_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def _idx(x):
    return np.ascontiguousarray(x, dtype=np.int64)


def concept_score(adjs, set_a, set_b, absolute=False, impl=None):
    """Mean over subjects of the mean edge weight between two ROI sets.

    Summation order is fixed: subjects outer, then ``set_a`` rows, then
    ``set_b`` columns.
    """
    impl = impl or _impl
    return impl.concept_score(np.ascontiguousarray(adjs, dtype=np.float64),
                              _idx(set_a), _idx(set_b), bool(absolute))


def avg_neighbor_degree(binary, impl=None):
    """Mean degree of each node's neighbours; 0 for isolated nodes."""
    impl = impl or _impl
    return impl.avg_neighbor_degree(np.ascontiguousarray(binary, dtype=np.uint8))


def bipartite_block(adj, set_a, set_b, tau, impl=None):
    """Node features and normalised message edges of one concept subgraph.

    Returns ``(avg_nbr_degree, rows, cols, vals)`` in local node order
    (``set_a`` then ``set_b``); ``vals[e] = A(u, v) / deg(u)`` for the
    thresholded bipartite edges.
    """
    impl = impl or _impl
    return impl.bipartite_block(np.ascontiguousarray(adj, dtype=np.float64),
                                _idx(set_a), _idx(set_b), float(tau))
