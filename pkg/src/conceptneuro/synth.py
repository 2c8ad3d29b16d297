"""Synthetic cohorts with planted connectivity effects, plus brute-force oracles.

Each ROI series is unit-variance noise. For every planted concept, subjects of
the affected class get one shared latent series mixed into all ROIs of
``set_a`` at amplitude ``a`` and into ``set_b`` at ``sign(effect) * a``, where
``a = noise * sqrt(|e| / (1 - |e|))`` so the expected cross-set correlation is
``e``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .concepts import Concept, ConceptSet, write_concepts
from .graph import (ROI, Atlas, Dataset, ROITimeSeries, pearson_fc, split_dataset,
                    write_matrix_csv)

DEFAULT_EFFECTS = (0.4, -0.4, 0.3)


@dataclass(frozen=True)
class PlantedEffect:
    concept_id: str
    effect: float
    affected_class: int = 1


@dataclass
class CohortSpec:
    n_rois: int = 40
    T: int = 120
    M: int = 200
    N: int = 2
    effects: tuple[float, ...] = DEFAULT_EFFECTS
    affected_class: int = 1
    pool_size: int = 20
    set_sizes: tuple[int, ...] = (2, 3)
    noise_std: float = 1.0
    seed: int = 0
    split_ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)

    @classmethod
    def from_dict(cls, raw: dict) -> "CohortSpec":
        unknown = sorted(set(raw) - set(cls.__dataclass_fields__))
        if unknown:
            raise ValueError(f"unknown cohort spec fields {unknown}")
        known = dict(raw)
        for key in ("effects", "set_sizes", "split_ratios"):
            if key in known:
                known[key] = tuple(known[key])
        return cls(**known)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("effects", "set_sizes", "split_ratios"):
            d[key] = list(d[key])
        return d


@dataclass
class Cohort:
    spec: CohortSpec
    dataset: Dataset
    timeseries: list[ROITimeSeries]
    pool: ConceptSet
    planted: list[PlantedEffect] = field(default_factory=list)

    @property
    def planted_ids(self) -> list[str]:
        return [p.concept_id for p in self.planted]

    def ground_truth(self) -> dict:
        return {"planted": self.planted_ids,
                "effects": {p.concept_id: p.effect for p in self.planted},
                "spec": self.spec.to_dict()}


def synthetic_atlas(n_rois: int) -> Atlas:
    rois = []
    for i in range(n_rois):
        hemi = "left" if i < n_rois // 2 else "right"
        rois.append(ROI(i, f"R{i:03d}", (f"region {i}",), hemi, "synthetic"))
    return Atlas(rois)


def mixing_amplitude(effect: float, noise_std: float = 1.0) -> float:
    """Latent amplitude giving cross-set correlation ``|effect|``: a^2 / (noise^2 + a^2)."""
    e = abs(effect)
    if not 0.0 <= e < 1.0:
        raise ValueError(f"infeasible effect {effect}: |effect| must be below 1")
    return noise_std * math.sqrt(e / (1.0 - e))


def concept_pool(spec: CohortSpec) -> tuple[list[Concept], list[PlantedEffect]]:
    """Planted concepts (pairwise disjoint) followed by decoys.

    A decoy never holds two ROIs of the same planted concept, so it carries
    no planted correlation between or within its sets.
    """
    rng = np.random.default_rng([spec.seed, 7919])
    sizes = list(spec.set_sizes)
    perm = [int(i) for i in rng.permutation(spec.n_rois)]
    concepts, planted, owner = [], [], {}
    for k, eff in enumerate(spec.effects):
        na, nb = int(rng.choice(sizes)), int(rng.choice(sizes))
        if len(perm) < na + nb:
            raise ValueError("atlas too small for the planted concepts")
        a, b = perm[:na], perm[na:na + nb]
        del perm[:na + nb]
        cid = f"syn-{k:03d}"
        concepts.append(Concept(cid, f"planted effect {eff:+.2f}", tuple(a), tuple(b),
                                1 if eff > 0 else (-1 if eff < 0 else None), "synthetic"))
        planted.append(PlantedEffect(cid, float(eff), spec.affected_class))
        for r in a + b:
            owner[r] = k
    seen = {c.edges() for c in concepts}
    k = len(concepts)
    tries = 0
    while len(concepts) < spec.pool_size:
        tries += 1
        if tries > 100000:
            raise ValueError("could not draw enough decoy concepts")
        na, nb = int(rng.choice(sizes)), int(rng.choice(sizes))
        nodes = [int(i) for i in rng.choice(spec.n_rois, size=na + nb, replace=False)]
        tags = [owner[r] for r in nodes if r in owner]
        if len(tags) != len(set(tags)):
            continue
        c = Concept(f"syn-{k:03d}", "decoy", tuple(nodes[:na]), tuple(nodes[na:]), None, "synthetic")
        if c.edges() in seen:
            continue
        seen.add(c.edges())
        concepts.append(c)
        k += 1
    return concepts, planted


def subject_series(spec: CohortSpec, label: int, concepts: list[Concept],
                   planted: list[PlantedEffect], index: int) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, index])
    x = spec.noise_std * rng.standard_normal((spec.T, spec.n_rois))
    by_id = {c.concept_id: c for c in concepts}
    for p in planted:
        latent = rng.standard_normal(spec.T)
        if label != p.affected_class or p.effect == 0.0:
            continue
        c = by_id[p.concept_id]
        amp = mixing_amplitude(p.effect, spec.noise_std)
        x[:, list(c.set_a)] += amp * latent[:, None]
        x[:, list(c.set_b)] += math.copysign(amp, p.effect) * latent[:, None]
    return x


def generate_cohort(spec: CohortSpec) -> Cohort:
    for e in spec.effects:
        mixing_amplitude(e, spec.noise_std)
    if spec.M < 3 * spec.N:
        raise ValueError("need at least 3 subjects per class")
    atlas = synthetic_atlas(spec.n_rois)
    concepts, planted = concept_pool(spec)
    labels = [i % spec.N for i in range(spec.M)]
    series, graphs = [], []
    for i, y in enumerate(labels):
        ts = ROITimeSeries(f"sub-{i:04d}", subject_series(spec, y, concepts, planted, i))
        series.append(ts)
        graphs.append(pearson_fc(ts, y))
    ds = split_dataset(Dataset(atlas, graphs, spec.N), spec.split_ratios, seed=spec.seed)
    pool = ConceptSet("synthetic", concepts, provenance=[f"synth seed={spec.seed}"])
    return Cohort(spec, ds, series, pool, planted)


def write_cohort(cohort: Cohort, out_dir) -> dict[str, Path]:
    """Write atlas, series, manifest (with splits), concept pool and ground truth."""
    out = Path(out_dir)
    (out / "timeseries").mkdir(parents=True, exist_ok=True)
    cohort.dataset.atlas.save(out / "atlas.json")
    subjects = []
    for ts, g in zip(cohort.timeseries, cohort.dataset.subjects):
        rel = f"timeseries/{ts.subject_id}.csv"
        write_matrix_csv(out / rel, ts.values)
        subjects.append({"id": ts.subject_id, "path": rel, "kind": "timeseries", "label": g.label})
    manifest = {"atlas": "atlas.json", "num_classes": cohort.dataset.num_classes,
                "subjects": subjects, "splits": cohort.dataset.splits}
    paths = {"manifest": out / "manifest.json", "concepts": out / "concepts.jsonl",
             "ground_truth": out / "ground_truth.json", "atlas": out / "atlas.json"}
    paths["manifest"].write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    write_concepts(paths["concepts"], cohort.pool.concepts)
    paths["ground_truth"].write_text(json.dumps(cohort.ground_truth(), indent=1, sort_keys=True) + "\n",
                                     encoding="utf-8")
    return paths


# ---------------------------------------------------------------- oracles
# Direct-formula reference implementations that share no code with the main path.


def oracle_pearson(ts) -> np.ndarray:
    x = np.asarray(ts.values if hasattr(ts, "values") else ts, dtype=np.float64)
    t, n = x.shape
    cols = [x[:, j].tolist() for j in range(n)]
    # r is scale invariant; dividing by the largest |value| keeps tiny columns out of underflow
    cols = [[v / m for v in c] if (m := max(abs(v) for v in c)) > 0 else c for c in cols]
    means = [math.fsum(c) / t for c in cols]
    dev = [[v - m for v in c] for c, m in zip(cols, means)]
    ss = [math.fsum(v * v for v in d) for d in dev]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if ss[i] == 0.0 or ss[j] == 0.0 or max(cols[i]) == min(cols[i]) or max(cols[j]) == min(cols[j]):
                r = 0.0
            else:
                r = math.fsum(a * b for a, b in zip(dev[i], dev[j])) / (math.sqrt(ss[i]) * math.sqrt(ss[j]))
            out[i, j] = out[j, i] = max(-1.0, min(1.0, r))
    return out


def oracle_concept_score(dataset: Dataset, concept: Concept, split: str = "train",
                         absolute: bool = False) -> float:
    """Mean over subjects of the mean ``set_a`` x ``set_b`` edge weight, summed left to right."""
    idx = range(len(dataset.subjects)) if split == "all" else dataset.splits[split]
    total = 0.0
    count = 0
    for i in idx:
        mat = dataset.subjects[i].adjacency.tolist()
        acc = 0.0
        for r in concept.set_a:
            for c in concept.set_b:
                w = mat[r][c]
                acc += abs(w) if absolute else w
        total += acc / (len(concept.set_a) * len(concept.set_b))
        count += 1
    return total / count


def oracle_topk(scores: dict[str, float], k: int) -> list[str]:
    if k <= 0:
        return []
    return [cid for cid, _ in sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]]
