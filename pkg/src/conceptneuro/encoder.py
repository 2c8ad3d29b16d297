"""Graph encoder shared by whole-subject graphs and concept subgraphs.

Node features are a one-hot of the global ROI index plus the node's average
neighbour degree on the thresholded graph. Two rounds of message passing
follow, each ``relu(batchnorm(W_s h_u + mean_v A(u, v) W_m h_v))`` over the
thresholded neighbours ``v``, with dropout after each round when training.
Subject graphs are mean-pooled, concept subgraphs attention-pooled.

All graphs of a mini-batch run as one disjoint union so batch-norm sees every
node of the batch at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from . import kernels
from .errors import DimensionError

HIDDEN = 64
LAYERS = 2
BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def init_encoder(n_rois: int, hidden: int = HIDDEN, rng: np.random.Generator | None = None) -> dict:
    """Glorot-uniform weights; batch-norm scale 1 and shift 0."""
    rng = rng or np.random.default_rng(0)

    def glorot(fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_in, fan_out))

    params = {}
    width = n_rois + 1
    for t in range(1, LAYERS + 1):
        params[f"enc.Wm{t}"] = glorot(width, hidden)
        params[f"enc.Ws{t}"] = glorot(width, hidden)
        params[f"enc.gamma{t}"] = np.ones(hidden)
        params[f"enc.beta{t}"] = np.zeros(hidden)
        width = hidden
    params["enc.att"] = rng.uniform(-1.0, 1.0, size=hidden) / np.sqrt(hidden)
    return params


def init_buffers(hidden: int = HIDDEN) -> dict:
    buf = {}
    for t in range(1, LAYERS + 1):
        buf[f"enc.rmean{t}"] = np.zeros(hidden)
        buf[f"enc.rvar{t}"] = np.ones(hidden)
    return buf


def update_running_stats(buffers: dict, stats, momentum: float = BN_MOMENTUM) -> None:
    for t, (mu, var) in enumerate(stats, 1):
        buffers[f"enc.rmean{t}"] = (1.0 - momentum) * buffers[f"enc.rmean{t}"] + momentum * mu
        buffers[f"enc.rvar{t}"] = (1.0 - momentum) * buffers[f"enc.rvar{t}"] + momentum * var


def build_node_features(roi_ids, binary, n_rois: int) -> np.ndarray:
    """Rows ``[one_hot(roi) | average neighbour degree]`` for a node list."""
    roi_ids = np.asarray(roi_ids, dtype=np.int64)
    binary = np.asarray(binary)
    if binary.shape != (roi_ids.size, roi_ids.size):
        raise DimensionError(f"adjacency {binary.shape} does not match {roi_ids.size} nodes")
    if roi_ids.size and (roi_ids.min() < 0 or roi_ids.max() >= n_rois):
        raise IndexError(f"roi ids must lie in 0..{n_rois - 1}")
    feat = np.zeros((roi_ids.size, n_rois + 1))
    feat[np.arange(roi_ids.size), roi_ids] = 1.0
    feat[:, n_rois] = kernels.avg_neighbor_degree(binary)
    return feat


@dataclass
class GraphPart:
    """One graph in local node order with its normalised message edges."""

    roi_ids: np.ndarray
    degree: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.roi_ids.size


def part_from_adjacency(roi_ids, weights, tau: float) -> GraphPart:
    """Message structure of an arbitrary graph given its weighted adjacency over ``roi_ids``."""
    roi_ids = np.asarray(roi_ids, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (roi_ids.size, roi_ids.size):
        raise DimensionError(f"adjacency {w.shape} does not match {roi_ids.size} nodes")
    mask = np.abs(w) >= tau
    np.fill_diagonal(mask, False)
    deg = mask.sum(axis=1).astype(np.float64)
    rows, cols = np.nonzero(mask)
    return GraphPart(roi_ids, kernels.avg_neighbor_degree(mask), rows.astype(np.int64),
                     cols.astype(np.int64), w[rows, cols] / deg[rows])


def subject_part(adjacency: np.ndarray, tau: float) -> GraphPart:
    """Whole-subject graph on its thresholded, weight-masked adjacency."""
    return part_from_adjacency(np.arange(adjacency.shape[0]), adjacency, tau)


def concept_part(adjacency: np.ndarray, set_a, set_b, tau: float) -> GraphPart:
    """Bipartite concept subgraph: only ``set_a``-``set_b`` edges carry messages."""
    feat, rows, cols, vals = kernels.bipartite_block(adjacency, set_a, set_b, tau)
    ids = np.concatenate([np.asarray(set_a, dtype=np.int64), np.asarray(set_b, dtype=np.int64)])
    return GraphPart(ids, feat, rows, cols, vals)


class GraphBatch:
    """Disjoint union of subject graphs followed by their concept subgraphs.

    ``concepts`` is subject-major: the concept parts of subject 0, then of
    subject 1, and so on, ``n_concepts`` per subject.
    """

    def __init__(self, subjects: list[GraphPart], concepts: list[GraphPart], n_rois: int):
        if not subjects:
            raise DimensionError("a batch needs at least one subject graph")
        if len(concepts) % len(subjects):
            raise DimensionError("concept parts must be a whole number per subject")
        self.n_subjects = len(subjects)
        self.n_concepts = len(concepts) // len(subjects)
        parts = subjects + concepts
        sizes = np.array([p.n_nodes for p in parts], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        n = int(sizes.sum())
        ids = np.concatenate([p.roi_ids for p in parts])
        deg = np.concatenate([p.degree for p in parts])
        r = np.arange(n)
        self.features = sp.csr_matrix(
            (np.concatenate([np.ones(n), deg]),
             (np.concatenate([r, r]), np.concatenate([ids, np.full(n, n_rois)]))),
            shape=(n, n_rois + 1))
        rows = np.concatenate([p.rows + o for p, o in zip(parts, offsets)])
        cols = np.concatenate([p.cols + o for p, o in zip(parts, offsets)])
        vals = np.concatenate([p.vals for p in parts])
        self.propagate = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        self.n_nodes = n
        self.n_subject_nodes = int(sizes[:len(subjects)].sum())
        self.subject_segments = ad.Segments(sizes[:len(subjects)])
        self.concept_segments = ad.Segments(sizes[len(subjects):]) if concepts else None


def message_passing(t: dict, batch: GraphBatch, buffers: dict, train: bool,
                    rng: np.random.Generator | None = None, dropout: float = 0.5):
    """Node states (n x d) for every node in the batch, plus batch-norm statistics."""
    stats = []
    h = None
    for k in range(1, LAYERS + 1):
        if k == 1:
            own = ad.spmm(batch.features, t[f"enc.Ws{k}"])
            msg = ad.spmm(batch.features, t[f"enc.Wm{k}"])
        else:
            own = ad.matmul(h, t[f"enc.Ws{k}"])
            msg = ad.matmul(h, t[f"enc.Wm{k}"])
        pre = ad.add(own, ad.spmm(batch.propagate, msg))
        y, st = ad.batch_norm(pre, t[f"enc.gamma{k}"], t[f"enc.beta{k}"],
                              buffers.get(f"enc.rmean{k}"), buffers.get(f"enc.rvar{k}"),
                              train, BN_EPS)
        if st is not None:
            stats.append(st)
        h = ad.dropout(ad.relu(y), dropout, rng, train)
    return h, stats


def mean_pool(states, segments: ad.Segments):
    return ad.segment_mean(states, segments)


def attention_pool(states, w, segments: ad.Segments):
    """Per segment: ``sum_u softmax(w . h_u) h_u``."""
    scores = ad.reshape(ad.matmul(states, ad.reshape(w, (-1, 1))), (-1,))
    alpha = ad.segment_softmax(scores, segments)
    return ad.segment_sum(ad.mul(states, ad.reshape(alpha, (-1, 1))), segments)


def encode_batch(t: dict, batch: GraphBatch, buffers: dict, train: bool,
                 rng: np.random.Generator | None = None, dropout: float = 0.5):
    """Returns ``(z, h_concepts, bn_stats)``; ``h_concepts`` is (B * N_c) x d, subject-major."""
    h, stats = message_passing(t, batch, buffers, train, rng, dropout)
    z = mean_pool(ad.slice_rows(h, 0, batch.n_subject_nodes), batch.subject_segments)
    hc = None
    if batch.concept_segments is not None:
        hc = attention_pool(ad.slice_rows(h, batch.n_subject_nodes, batch.n_nodes),
                            t["enc.att"], batch.concept_segments)
    return z, hc, stats


def _constants(params):
    return {k: ad.Tensor(np.asarray(v, dtype=np.float64)) for k, v in params.items()}


def encode_subject(adjacency: np.ndarray, params: dict, buffers: dict, tau: float = 0.3) -> np.ndarray:
    """Eval-mode subject embedding ``z``."""
    batch = GraphBatch([subject_part(adjacency, tau)], [], adjacency.shape[0])
    z, _, _ = encode_batch(_constants(params), batch, buffers, train=False)
    return z.data[0]


def encode_concept(adjacency: np.ndarray, set_a, set_b, params: dict, buffers: dict,
                   tau: float = 0.3) -> np.ndarray:
    """Eval-mode concept-subgraph embedding ``h^c`` for one subject."""
    n = adjacency.shape[0]
    batch = GraphBatch([subject_part(adjacency, tau)], [concept_part(adjacency, set_a, set_b, tau)], n)
    _, hc, _ = encode_batch(_constants(params), batch, buffers, train=False)
    return hc.data[0]
