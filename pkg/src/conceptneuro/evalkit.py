"""Accuracy, expert agreement, per-subject similarity distributions, importance and ablations."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .bottleneck import importance
from .concepts import Concept, ConceptSet
from .errors import InputError, SchemaError
from .graph import Dataset
from .trainer import Checkpoint, TrainConfig, checkpoint_outputs, predict_labels, train

AGREEMENT_KS = (3, 5, 10)
N_BINS = 20


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0:
        raise ValueError("accuracy of an empty prediction set")
    if predictions.shape != labels.shape:
        raise ValueError(f"{predictions.size} predictions for {labels.size} labels")
    return float(np.mean(predictions == labels))


def concept_agreement(model_topk, expert_topk, k: int) -> float:
    """Fraction of the first ``k`` model concepts that are among the first ``k`` expert concepts."""
    if k <= 0:
        raise ValueError("k must be positive")
    model_topk, expert_topk = list(model_topk), list(expert_topk)
    if len(model_topk) < k or len(expert_topk) < k:
        raise ValueError(f"both lists need at least k={k} entries")
    return len(set(model_topk[:k]) & set(expert_topk[:k])) / k


def top_ids(scores, ids, k: int) -> list[str]:
    """Ids of the ``k`` largest scores, ties broken by id."""
    order = sorted(range(len(ids)), key=lambda j: (-scores[j], ids[j]))
    return [ids[j] for j in order[:k]]


def ranking_agreement(scores, concept_ids, expert_topk, k: int, rule: str = "half",
                      threshold: int | None = None) -> float:
    """Fraction of subjects whose own top-``k`` concepts (by score) match the expert list.

    ``rule="half"`` needs at least ``ceil(k / 2)`` hits (or ``threshold`` if
    given); ``rule="subset"`` needs all ``k``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise ValueError("ranking_agreement needs a non-empty subjects x concepts score matrix")
    ids = list(concept_ids)
    if scores.shape[1] != len(ids):
        raise ValueError(f"{scores.shape[1]} score columns for {len(ids)} concept ids")
    if not 0 < k <= len(ids):
        raise ValueError(f"k must lie in 1..{len(ids)}")
    if rule == "half":
        need = math.ceil(k / 2) if threshold is None else threshold
    elif rule == "subset":
        need = k
    else:
        raise ValueError(f"unknown rule {rule!r}")
    expert = set(expert_topk)
    matched = sum(len(expert.intersection(top_ids(row, ids, k))) >= need for row in scores)
    return matched / scores.shape[0]


def importance_ranking(W, concept_ids) -> list[str]:
    """Concept ids by descending column norm of ``W``, ties by id."""
    return top_ids(importance(W), list(concept_ids), len(concept_ids))


def cosine(a, b) -> np.ndarray:
    """Row-wise cosine similarity; 0 where either vector is zero."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    dot = np.einsum("ij,ij->i", a, b)
    out = np.zeros(dot.shape)
    ok = (na > 0) & (nb > 0)
    out[ok] = dot[ok] / (na[ok] * nb[ok])
    return np.clip(out, -1.0, 1.0)


@dataclass
class SimilarityDistribution:
    concept_id: str
    similarities: np.ndarray
    edges: np.ndarray = field(default_factory=lambda: np.linspace(-1.0, 1.0, N_BINS + 1))
    counts: np.ndarray | None = None

    def __post_init__(self):
        if self.counts is None:
            self.counts, _ = np.histogram(self.similarities, bins=self.edges)

    @property
    def mean(self) -> float:
        return float(np.mean(self.similarities))


def similarity_distribution(ckpt: Checkpoint, dataset: Dataset, concept_id: str,
                            split: str = "test") -> SimilarityDistribution:
    ids = ckpt.concepts.ids
    if concept_id not in ids:
        raise KeyError(f"concept {concept_id!r} is not in the checkpoint")
    out = checkpoint_outputs(ckpt, dataset, _indices(dataset, split))
    c = ids.index(concept_id)
    return SimilarityDistribution(concept_id, cosine(out["z"], out["hc"][:, c, :]))


def _indices(dataset: Dataset, split: str) -> list[int]:
    return list(range(len(dataset))) if split == "all" else list(dataset.splits[split])


def split_accuracy(ckpt: Checkpoint, dataset: Dataset, split: str = "test") -> float:
    idx = _indices(dataset, split)
    p = checkpoint_outputs(ckpt, dataset, idx)["p"]
    return accuracy(predict_labels(p), dataset.labels[idx])


# ---------------------------------------------------------------- expert agreement


def load_expert(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON at line {exc.lineno}") from None
    if not isinstance(raw, dict) or "topk" not in raw:
        raise SchemaError(f"{path}: expert file needs a 'topk' object")
    return {"disorder": raw.get("disorder", ""),
            "topk": {int(k): list(v) for k, v in raw["topk"].items()}}


@dataclass
class AgreementReport:
    disorder: str
    ks: list[int]
    concept_agreement: dict[int, float]
    ranking_agreement: dict[int, float]
    model_topk: list[str]

    def __post_init__(self):
        for v in list(self.concept_agreement.values()) + list(self.ranking_agreement.values()):
            if not 0.0 <= v <= 1.0:
                raise ValueError("agreement fractions must lie in [0, 1]")


def agreement_report(ckpt: Checkpoint, dataset: Dataset, expert: dict,
                     split: str = "test") -> AgreementReport:
    ids = ckpt.concepts.ids
    ranked = importance_ranking(ckpt.W, ids)
    scores = checkpoint_outputs(ckpt, dataset, _indices(dataset, split))["s"]
    ks = [k for k in sorted(expert["topk"]) if k <= len(ids) and len(expert["topk"][k]) >= k]
    ca = {k: concept_agreement(ranked, expert["topk"][k], k) for k in ks}
    ra = {k: ranking_agreement(scores, ids, expert["topk"][k], k) for k in ks}
    return AgreementReport(expert["disorder"], ks, ca, ra, ranked[:max(ks, default=0)])


# ---------------------------------------------------------------- ablation


def random_concepts(pool: ConceptSet, n_rois: int, seed: int) -> ConceptSet:
    """One random concept per pool concept, with the same pair of set sizes."""
    rng = np.random.default_rng([seed, 4242])
    out = []
    for k, c in enumerate(pool):
        na, nb = len(c.set_a), len(c.set_b)
        if na + nb > n_rois:
            raise ValueError(f"concept {c.concept_id} is larger than the atlas")
        nodes = rng.choice(n_rois, size=na + nb, replace=False)
        out.append(Concept(f"rnd-{k:03d}", "random region sets", tuple(int(v) for v in nodes[:na]),
                           tuple(int(v) for v in nodes[na:]), None, pool.disorder))
    return ConceptSet(pool.disorder, out, provenance=[f"random seed={seed}"])


@dataclass
class AblationResult:
    mode: str
    k: int
    seed: int
    test_acc: float
    concept_ids: list[str]
    checkpoint: Checkpoint = field(repr=False, compare=False)

    def row(self) -> dict:
        return {"mode": self.mode, "k": self.k, "seed": self.seed, "test_acc": self.test_acc,
                "n_concepts": len(self.concept_ids)}


def ablate(dataset: Dataset, pool: ConceptSet, mode: str, k: int | None, seed: int,
           config: TrainConfig, full: Checkpoint | None = None) -> AblationResult:
    """Train one fresh model for ``mode`` and report its test accuracy.

    ``topk`` keeps the ``k`` most important concepts of a full-pool model
    (``full`` if given, otherwise trained here with the same config and seed).
    """
    config = replace(config, seed=seed, n_c=None)
    n = len(pool)
    if mode == "full":
        concepts = pool
    elif mode == "random":
        concepts = random_concepts(pool, len(dataset.atlas), seed)
    elif mode == "topk":
        if k is None or not 0 < k <= n:
            raise ValueError(f"k={k} must lie in 1..{n} for topk ablation")
        if full is None:
            full = train(dataset, pool, config)
        if k == n:
            concepts = pool
        else:
            keep = set(importance_ranking(full.W, full.concepts.ids)[:k])
            concepts = pool.subset([cid for cid in pool.ids if cid in keep])
    else:
        raise ValueError(f"unknown ablation mode {mode!r}")
    if mode == "topk" and k == n and full is not None and full.config.seed == seed:
        ckpt = full
    else:
        ckpt = train(dataset, concepts, config)
    return AblationResult(mode, k if k is not None else len(concepts), seed,
                          split_accuracy(ckpt, dataset), list(concepts.ids), ckpt)


# ---------------------------------------------------------------- reports


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> None:
    if not rows and columns is None:
        raise InputError("nothing to write")
    columns = columns or list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: _fmt(r.get(c)) for c in columns})


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def agreement_rows(report: AgreementReport) -> list[dict]:
    return [{"disorder": report.disorder, "k": k, "concept_agreement": report.concept_agreement[k],
             "ranking_agreement": report.ranking_agreement[k]} for k in report.ks]


def report_json(report) -> str:
    d = asdict(report)
    for key, v in list(d.items()):
        if isinstance(v, np.ndarray):
            d[key] = v.tolist()
        elif isinstance(v, dict):
            d[key] = {str(k): x for k, x in v.items()}
    return json.dumps(d, indent=1, sort_keys=True) + "\n"


def histogram_rows(dist: SimilarityDistribution) -> list[dict]:
    e = dist.edges
    return [{"concept_id": dist.concept_id, "bin_low": float(e[j]), "bin_high": float(e[j + 1]),
             "count": int(dist.counts[j])} for j in range(len(dist.counts))]


def histogram_svg(dist: SimilarityDistribution, width: int = 480, height: int = 240) -> str:
    """Standalone SVG bar chart of a similarity histogram."""
    pad_l, pad_r, pad_t, pad_b = 40, 10, 24, 30
    plot_w, plot_h = width - pad_l - pad_r, height - pad_t - pad_b
    counts = np.asarray(dist.counts)
    top = max(int(counts.max()), 1)
    bar_w = plot_w / len(counts)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<title>cosine similarity: {escape(dist.concept_id)}</title>',
             f'<text x="{width / 2:.1f}" y="16" text-anchor="middle" font-size="12">'
             f'{escape(dist.concept_id)} (n={int(counts.sum())}, mean={dist.mean:.3f})</text>']
    for j, c in enumerate(counts):
        h = plot_h * int(c) / top
        x = pad_l + j * bar_w
        parts.append(f'<rect x="{x:.2f}" y="{pad_t + plot_h - h:.2f}" width="{bar_w - 1:.2f}" '
                     f'height="{h:.2f}" fill="#4c72b0"/>')
    base = pad_t + plot_h
    parts.append(f'<line x1="{pad_l}" y1="{base}" x2="{pad_l + plot_w}" y2="{base}" stroke="black"/>')
    parts.append(f'<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{base}" stroke="black"/>')
    for v in (-1.0, -0.5, 0.0, 0.5, 1.0):
        x = pad_l + (v + 1.0) / 2.0 * plot_w
        parts.append(f'<text x="{x:.1f}" y="{base + 14}" text-anchor="middle" font-size="10">{v:g}</text>')
    parts.append(f'<text x="{pad_l - 4}" y="{pad_t + 4}" text-anchor="end" font-size="10">{top}</text>')
    parts.append(f'<text x="{pad_l - 4}" y="{base}" text-anchor="end" font-size="10">0</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
