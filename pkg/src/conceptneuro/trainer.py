"""Mini-batch training with validation-based early stopping, and checkpoints.

Runs are deterministic for a fixed seed: batch composition draws from
``default_rng([seed, epoch])``, dropout masks from ``default_rng([seed, epoch, 1])``,
and BLAS is pinned to one thread unless ``jobs > 1``.
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from . import bottleneck as bn
from . import encoder as enc
from .concepts import Concept, ConceptSet
from .errors import CheckpointError, InputError, NumericFault, SchemaError
from .graph import Dataset

CHECKPOINT_VERSION = "1"


@dataclass
class TrainConfig:
    epochs: int = 500
    batches_per_epoch: int = 100
    pos_per_batch: int = 16
    neg_per_batch: int = 16
    lr: float = 1e-3
    weight_decay: float = 1e-4
    dropout: float = 0.5
    validate_every: int = 5
    patience: int = 20
    seed: int = 0
    lambda_sp: float = 1.0
    lambda_dir: float = 1.0
    tau: float = 0.3
    n_c: int | None = None
    hidden: int = enc.HIDDEN
    activation: str = "sigmoid"
    decoupled_weight_decay: bool = True
    jobs: int = 1

    def __post_init__(self):
        for name in ("epochs", "batches_per_epoch", "pos_per_batch", "neg_per_batch",
                     "validate_every", "patience", "hidden", "jobs"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.n_c is not None and self.n_c < 1:
            raise ValueError("n_c must be positive")
        if self.activation not in ("sigmoid", "linear"):
            raise ValueError("activation must be 'sigmoid' or 'linear'")
        bn.LossWeights(self.lambda_sp, self.lambda_dir)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - names)
        if unknown:
            raise SchemaError(f"unknown config fields {unknown}")
        return cls(**raw)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON at line {exc.lineno}") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("jobs")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------- batching


def balanced_batches(indices, labels, config: TrainConfig, seed: int, epoch: int) -> list[np.ndarray]:
    """Binary task: each batch takes up to ``neg_per_batch`` of class 0 and
    ``pos_per_batch`` of class 1, topping a short class up by resampling."""
    indices = np.asarray(indices, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng([seed, epoch])
    pools = [indices[labels == c] for c in (0, 1)]
    for c, pool in enumerate(pools):
        if pool.size == 0:
            raise InputError(f"class {c} is absent from the training split")
    want = (config.neg_per_batch, config.pos_per_batch)
    batches = []
    for _ in range(config.batches_per_epoch):
        parts = []
        for pool, k in zip(pools, want):
            if pool.size >= k:
                parts.append(rng.choice(pool, size=k, replace=False))
            else:
                parts.append(np.concatenate([rng.permutation(pool),
                                             rng.choice(pool, size=k - pool.size, replace=True)]))
        batches.append(np.concatenate(parts))
    return batches


def stratified_batches(indices, labels, config: TrainConfig, seed: int, epoch: int) -> list[np.ndarray]:
    """Multi-class: batches of ``pos + neg`` subjects drawn proportionally, at least one per class."""
    indices = np.asarray(indices, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng([seed, epoch])
    classes = np.unique(labels)
    pools = [indices[labels == c] for c in classes]
    size = config.pos_per_batch + config.neg_per_batch
    frac = np.array([p.size for p in pools], dtype=np.float64) / indices.size
    counts = np.maximum(1, np.floor(frac * size).astype(int))
    order = np.argsort(-(frac * size - np.floor(frac * size)), kind="stable")
    k = 0
    while counts.sum() < size:
        counts[order[k % len(order)]] += 1
        k += 1
    batches = []
    for _ in range(config.batches_per_epoch):
        parts = []
        for pool, n in zip(pools, counts):
            parts.append(rng.choice(pool, size=n, replace=pool.size < n))
        batches.append(np.concatenate(parts))
    return batches


def make_batches(indices, labels, num_classes, config, seed, epoch):
    if num_classes == 2:
        return balanced_batches(indices, labels, config, seed, epoch)
    return stratified_batches(indices, labels, config, seed, epoch)


# ---------------------------------------------------------------- model plumbing


class PartCache:
    """Per-subject message structures; embeddings are never cached."""

    def __init__(self, dataset: Dataset, concepts: ConceptSet, tau: float):
        self.dataset = dataset
        self.concepts = list(concepts)
        self.tau = tau
        self._parts: dict[int, tuple] = {}

    def get(self, i: int):
        hit = self._parts.get(i)
        if hit is None:
            adj = self.dataset.subjects[i].adjacency
            hit = (enc.subject_part(adj, self.tau),
                   [enc.concept_part(adj, c.set_a, c.set_b, self.tau) for c in self.concepts])
            self._parts[i] = hit
        return hit

    def batch(self, idx) -> enc.GraphBatch:
        subs, cons = [], []
        for i in idx:
            s, cs = self.get(int(i))
            subs.append(s)
            cons.extend(cs)
        return enc.GraphBatch(subs, cons, len(self.dataset.atlas))


@dataclass
class Outputs:
    z: ad.Tensor
    hc: ad.Tensor
    s: ad.Tensor
    o: ad.Tensor
    p: ad.Tensor
    stats: list


def forward(t: dict, batch: enc.GraphBatch, buffers: dict, train: bool, activation: str = "sigmoid",
            rng: np.random.Generator | None = None, dropout: float = 0.5) -> Outputs:
    z, hc, stats = enc.encode_batch(t, batch, buffers, train, rng, dropout)
    hc3 = ad.reshape(hc, (batch.n_subjects, batch.n_concepts, z.shape[1]))
    s = bn.concept_scores(z, hc3)
    o = bn.logits(s, z, t, activation)
    return Outputs(z, hc3, s, o, bn.predict(o), stats)


def init_params(n_rois: int, n_classes: int, n_concepts: int, hidden: int, seed: int) -> dict:
    rng = np.random.default_rng([seed, 0])
    params = enc.init_encoder(n_rois, hidden, rng)
    params.update(bn.init_bottleneck(n_classes, n_concepts, hidden, rng))
    return params


def constants(params: dict) -> dict:
    return {k: ad.Tensor(v) for k, v in params.items()}


# ---------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    config: TrainConfig
    concepts: ConceptSet
    params: dict
    buffers: dict
    n_rois: int
    n_classes: int
    best_val_acc: float
    epoch: int
    final_train_loss: float
    version: str = CHECKPOINT_VERSION
    history: list = field(default_factory=list, repr=False, compare=False)

    @property
    def W(self) -> np.ndarray:
        return self.params["head.W"]

    def to_json(self) -> str:
        def snap(d):
            return {k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()} for k, v in sorted(d.items())}

        doc = {
            "version": self.version,
            "config_hash": self.config.hash(),
            "concepts_hash": self.concepts.content_hash(),
            "config": self.config.to_dict(),
            "concepts": [c.to_record(s) for c, s in
                         zip(self.concepts.concepts, self.concepts.scores or [None] * len(self.concepts))],
            "disorder": self.concepts.disorder,
            "encoder": snap({k: v for k, v in self.params.items() if k.startswith("enc.")}),
            "buffers": snap(self.buffers),
            "bottleneck": snap({k: v for k, v in self.params.items() if k.startswith("head.")}),
            "n_rois": self.n_rois,
            "n_classes": self.n_classes,
            "best_val_acc": self.best_val_acc,
            "epoch": self.epoch,
            "final_train_loss": self.final_train_loss,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    atomic_write_text(path, ckpt.to_json())


def _unsnap(d):
    out = {}
    for k, v in d.items():
        arr = np.array(v["values"], dtype=np.float64)
        if arr.size != int(np.prod(v["shape"])):
            raise CheckpointError(f"tensor {k}: {arr.size} values for shape {v['shape']}")
        out[k] = arr.reshape(v["shape"])
    return out


def load_checkpoint(path, concepts: ConceptSet | None = None) -> Checkpoint:
    """Read a checkpoint; refuses a version or (when ``concepts`` is given) concept-hash mismatch."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a valid checkpoint (JSON error at line {exc.lineno})") from None
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror}") from None
    if not isinstance(doc, dict) or doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version') if isinstance(doc, dict) else None!r}")
    try:
        stored = ConceptSet(doc["disorder"], [
            Concept(r["id"], r.get("raw_text", ""), tuple(r["set_a"]), tuple(r["set_b"]),
                    r.get("direction"), r.get("disorder", "")) for r in doc["concepts"]])
        scores = [r.get("score") for r in doc["concepts"]]
        if scores and all(s is not None for s in scores):
            stored.scores = [float(s) for s in scores]
        if stored.content_hash() != doc["concepts_hash"]:
            raise CheckpointError(f"{path}: embedded concepts do not match concepts_hash")
        if concepts is not None and concepts.content_hash() != doc["concepts_hash"]:
            raise CheckpointError("concept set differs from the one the checkpoint was trained with")
        params = _unsnap(doc["encoder"])
        params.update(_unsnap(doc["bottleneck"]))
        return Checkpoint(TrainConfig.from_dict(doc["config"]), stored, params, _unsnap(doc["buffers"]),
                          int(doc["n_rois"]), int(doc["n_classes"]), doc["best_val_acc"],
                          int(doc["epoch"]), doc["final_train_loss"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from None


# ---------------------------------------------------------------- inference


def run_model(params: dict, buffers: dict, cache: PartCache, indices, activation: str = "sigmoid",
              chunk: int = 64) -> dict[str, np.ndarray]:
    """Eval-mode outputs for ``indices``: z (M x d), hc (M x N_c x d), s, o, p."""
    t = constants(params)
    acc = {k: [] for k in ("z", "hc", "s", "o", "p")}
    indices = list(indices)
    for start in range(0, len(indices), chunk):
        out = forward(t, cache.batch(indices[start:start + chunk]), buffers, False, activation)
        for k in acc:
            acc[k].append(getattr(out, k).data)
    return {k: np.concatenate(v) for k, v in acc.items()}


def predict_labels(p: np.ndarray) -> np.ndarray:
    return np.argmax(p, axis=1)


def checkpoint_outputs(ckpt: Checkpoint, dataset: Dataset, indices) -> dict[str, np.ndarray]:
    if len(dataset.atlas) != ckpt.n_rois:
        raise InputError(f"dataset has {len(dataset.atlas)} ROIs, checkpoint expects {ckpt.n_rois}")
    cache = PartCache(dataset, ckpt.concepts, ckpt.config.tau)
    return run_model(ckpt.params, ckpt.buffers, cache, indices, ckpt.config.activation)


# ---------------------------------------------------------------- training


def train(dataset: Dataset, concepts: ConceptSet, config: TrainConfig,
          history: list | None = None) -> Checkpoint:
    """Train from scratch; returns the checkpoint with the best validation accuracy."""
    if config.n_c is not None:
        concepts = ConceptSet(concepts.disorder, concepts.concepts[:config.n_c],
                              concepts.scores[:config.n_c] if concepts.scores else None,
                              list(concepts.provenance))
    if len(concepts) == 0:
        raise InputError("training needs at least one concept")
    for key in ("train", "val"):
        if not dataset.splits.get(key):
            raise InputError(f"dataset has no {key!r} split")
    with threadpool_limits(limits=config.jobs):
        return _train(dataset, concepts, config, history if history is not None else [])


def _train(dataset, concepts, config, history):
    seed = config.seed
    n_rois, n_classes = len(dataset.atlas), dataset.num_classes
    params = init_params(n_rois, n_classes, len(concepts), config.hidden, seed)
    buffers = enc.init_buffers(config.hidden)
    opt = ad.Adam(lr=config.lr, weight_decay=config.weight_decay, decoupled=config.decoupled_weight_decay)
    weights = bn.LossWeights(config.lambda_sp, config.lambda_dir)
    priors = bn.prior_vector(concepts.directions)
    cache = PartCache(dataset, concepts, config.tau)
    train_idx = np.asarray(dataset.splits["train"], dtype=np.int64)
    val_idx = dataset.splits["val"]
    labels = dataset.labels
    val_labels = labels[val_idx]

    best = None
    best_acc = -1.0
    stale = 0
    last_loss = float("nan")
    for epoch in range(1, config.epochs + 1):
        batches = make_batches(train_idx, labels[train_idx], n_classes, config, seed, epoch)
        drop_rng = np.random.default_rng([seed, epoch, 1])
        sums = np.zeros(4)
        for b, idx in enumerate(batches):
            try:
                tape = ad.Tape()
                t = {k: tape.param(k, v) for k, v in params.items()}
                out = forward(t, cache.batch(idx), buffers, True, config.activation, drop_rng, config.dropout)
                total, ce, l1, hinge = bn.total_loss(out.p, labels[idx], t["head.W"], priors, weights)
                grads = tape.backward(total)
                opt.step(params, grads)
            except NumericFault as exc:
                raise NumericFault(f"{exc} at epoch {epoch}, batch {b}") from None
            enc.update_running_stats(buffers, out.stats)
            last_loss = float(total.data)
            sums += [last_loss, float(ce.data), float(l1.data), float(hinge.data)]
        if epoch % config.validate_every == 0 or epoch == config.epochs:
            p = run_model(params, buffers, cache, val_idx, config.activation)["p"]
            acc = float(np.mean(predict_labels(p) == val_labels))
            mean = sums / len(batches)
            history.append({"epoch": epoch, "loss": mean[0], "ce": mean[1], "l1": mean[2],
                            "hinge": mean[3], "val_acc": acc, "last_batch_loss": last_loss})
            # ties keep the later, longer-trained state; only strict gains reset patience
            if acc >= best_acc:
                best = (copy.deepcopy(params), copy.deepcopy(buffers), epoch, last_loss)
            if acc > best_acc:
                best_acc, stale = acc, 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    bp, bb, be, bl = best
    ckpt = Checkpoint(config, concepts, bp, bb, n_rois, n_classes, best_acc, be, bl)
    ckpt.history = history
    return ckpt
