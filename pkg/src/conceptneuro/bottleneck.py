"""Concept-score bottleneck head and its training objective.

Per subject ``i`` with embedding ``z`` and concept embeddings ``h^c``:

    s_c = z . h^c
    o   = act(W s + W_z z + b)      act = sigmoid (default) or identity
    p   = softmax(o)

The loss is the summed cross-entropy plus ``lambda_sp * |W|_1`` plus
``lambda_dir * sum_c sum_j max(0, -delta_c W[j, c])^2`` over concepts that carry
a direction prior ``delta_c``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DimensionError

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda_sp: float = 1.0
    lambda_dir: float = 1.0

    def __post_init__(self):
        for name in ("lambda_sp", "lambda_dir"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


def init_bottleneck(n_classes: int, n_concepts: int, hidden: int,
                    rng: np.random.Generator | None = None, scheme: str = "zeros") -> dict:
    """Head weights. ``zeros`` (default) lets every column of ``W`` start equal, so
    column norms later reflect training signal rather than the draw; ``glorot``
    draws uniform weights."""
    if scheme == "zeros":
        return {"head.W": np.zeros((n_classes, n_concepts)), "head.Wz": np.zeros((n_classes, hidden)),
                "head.b": np.zeros(n_classes)}
    if scheme != "glorot":
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = rng or np.random.default_rng(0)
    lim_w = np.sqrt(6.0 / (n_classes + n_concepts))
    lim_z = np.sqrt(6.0 / (n_classes + hidden))
    return {
        "head.W": rng.uniform(-lim_w, lim_w, size=(n_classes, n_concepts)),
        "head.Wz": rng.uniform(-lim_z, lim_z, size=(n_classes, hidden)),
        "head.b": np.zeros(n_classes),
    }


def prior_vector(directions) -> np.ndarray:
    """+1/-1 per concept with a prior, 0 where absent."""
    return np.array([0.0 if d is None else float(d) for d in directions])


def concept_scores(z, hc):
    """``s[i, c] = z_i . h_i^c``; ``z`` is B x d, ``hc`` is B x N_c x d."""
    if z.shape[-1] != hc.shape[-1]:
        raise DimensionError(f"embedding widths differ: {z.shape[-1]} vs {hc.shape[-1]}")
    return ad.sum_(ad.mul(hc, ad.reshape(z, (z.shape[0], 1, z.shape[1]))), axis=2)


def logits(s, z, t: dict, activation: str = "sigmoid"):
    W, Wz, b = t["head.W"], t["head.Wz"], t["head.b"]
    if s.shape[1] != W.shape[1] or z.shape[1] != Wz.shape[1]:
        raise DimensionError(f"head expects {W.shape[1]} scores and width {Wz.shape[1]}, "
                             f"got {s.shape[1]} and {z.shape[1]}")
    pre = ad.add(ad.add(ad.matmul(s, ad.transpose(W)), ad.matmul(z, ad.transpose(Wz))), b)
    if activation == "sigmoid":
        return ad.sigmoid(pre)
    if activation == "linear":
        return pre
    raise ValueError(f"unknown activation {activation!r}")


def predict(o):
    return ad.softmax(o)


def ce_loss(p, labels):
    """Summed negative log-likelihood of the true labels (probabilities clamped at 1e-12)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size != p.shape[0]:
        raise DimensionError(f"{labels.size} labels for {p.shape[0]} predictions")
    if labels.size and (labels.min() < 0 or labels.max() >= p.shape[1]):
        raise ValueError("label outside the class range")
    picked = ad.pick(p, np.arange(labels.size), labels)
    if np.any(picked.data < PROB_FLOOR):
        warnings.warn("true-class probability below 1e-12 clamped before log", RuntimeWarning,
                      stacklevel=2)
    return ad.neg(ad.sum_(ad.log(picked, clamp=PROB_FLOOR)))


def l1_loss(W):
    return ad.sum_(ad.abs_(W))


def direction_hinge(W, priors: np.ndarray):
    """Squared hinge on sign violations of prior-tagged columns of ``W``."""
    priors = np.asarray(priors, dtype=np.float64)
    if priors.shape != (W.shape[1],):
        raise DimensionError(f"{priors.size} priors for {W.shape[1]} concepts")
    if not np.any(priors):
        return ad.Tensor(np.array(0.0))
    viol = ad.relu(ad.neg(ad.mul(W, priors.reshape(1, -1))))
    return ad.sum_(ad.square(viol))


def total_loss(p, labels, W, priors, weights: LossWeights):
    """Returns ``(total, ce, l1, hinge)`` tensors."""
    ce = ce_loss(p, labels)
    l1 = l1_loss(W)
    hinge = direction_hinge(W, priors)
    total = ce
    if weights.lambda_sp:
        total = ad.add(total, ad.mul(l1, weights.lambda_sp))
    if weights.lambda_dir and np.any(priors):
        total = ad.add(total, ad.mul(hinge, weights.lambda_dir))
    return total, ce, l1, hinge


def hinge_value(W: np.ndarray, priors) -> float:
    viol = np.maximum(0.0, -np.asarray(W) * np.asarray(priors, dtype=np.float64).reshape(1, -1))
    return float(np.sum(viol * viol))


def importance(W: np.ndarray) -> np.ndarray:
    """Column L2 norms of the concept-to-class weights."""
    return np.sqrt(np.sum(np.asarray(W) ** 2, axis=0))
