"""Atlases, ROI time series, Pearson functional-connectivity graphs and datasets."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, InputError, SchemaError

HEMISPHERES = ("left", "right", "midline")


@dataclass(frozen=True)
class ROI:
    roi_id: int
    name: str
    aliases: tuple[str, ...] = ()
    hemisphere: str = "midline"
    group: str | None = None


@dataclass
class Atlas:
    rois: list[ROI]
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for pos, roi in enumerate(self.rois):
            if roi.roi_id != pos:
                raise SchemaError(f"roi ids must be 0..{len(self.rois) - 1} without gaps; "
                                  f"record {pos} has id {roi.roi_id}")
            if roi.hemisphere not in HEMISPHERES:
                raise SchemaError(f"roi {roi.roi_id}: unknown hemisphere {roi.hemisphere!r}")
        owners: dict[str, list[int]] = {}
        for roi in self.rois:
            owners.setdefault(roi.name.lower(), []).append(roi.roi_id)
        dup = {k: v for k, v in owners.items() if len(v) > 1}
        if dup:
            name, ids = next(iter(dup.items()))
            raise SchemaError(f"duplicate roi name {name!r} for roi_ids {ids}")
        alias_owners: dict[str, set[int]] = {}
        for roi in self.rois:
            for alias in roi.aliases:
                alias_owners.setdefault(alias.lower(), set()).add(roi.roi_id)
        for alias, ids in alias_owners.items():
            clash = ids | set(owners.get(alias, ()))
            if len(clash) > 1:
                raise SchemaError(f"alias {alias!r} is shared by roi_ids {sorted(clash)}")
        self._index = {k: v[0] for k, v in owners.items()}
        for alias, ids in alias_owners.items():
            self._index[alias] = next(iter(ids))

    def __len__(self):
        return len(self.rois)

    @property
    def names(self) -> list[str]:
        return [r.name for r in self.rois]

    def lookup(self, name: str) -> int:
        """roi_id for a canonical name or alias (case-insensitive)."""
        try:
            return self._index[name.lower()]
        except KeyError:
            raise KeyError(f"unknown roi {name!r}") from None

    def aliases(self) -> dict[str, int]:
        return dict(self._index)

    def hemisphere_of(self, roi_id: int) -> str:
        return self.rois[roi_id].hemisphere

    def to_records(self) -> list[dict]:
        return [{"id": r.roi_id, "name": r.name, "aliases": list(r.aliases),
                 "hemisphere": r.hemisphere, "group": r.group} for r in self.rois]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_records(), indent=1) + "\n", encoding="utf-8")


def atlas_from_records(records) -> Atlas:
    if not isinstance(records, list):
        raise SchemaError("atlas file must hold a top-level JSON array")
    rois = []
    for pos, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise SchemaError(f"record {pos}: expected an object")
        for key in ("id", "name", "aliases", "hemisphere"):
            if key not in rec:
                raise SchemaError(f"record {pos}: missing field {key!r}")
        if not isinstance(rec["id"], int) or not isinstance(rec["name"], str):
            raise SchemaError(f"record {pos}: 'id' must be int and 'name' str")
        if not isinstance(rec["aliases"], list) or not all(isinstance(a, str) for a in rec["aliases"]):
            raise SchemaError(f"record {pos}: 'aliases' must be a list of strings")
        rois.append(ROI(rec["id"], rec["name"], tuple(rec["aliases"]), rec["hemisphere"],
                        rec.get("group")))
    rois.sort(key=lambda r: r.roi_id)
    return Atlas(rois)


def load_atlas(path) -> Atlas:
    """Read and validate an atlas JSON file."""
    try:
        records = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}") from None
    return atlas_from_records(records)


@dataclass
class ROITimeSeries:
    subject_id: str
    values: np.ndarray  # T x |V|

    @property
    def T(self) -> int:
        return self.values.shape[0]


@dataclass
class SubjectGraph:
    subject_id: str
    adjacency: np.ndarray
    label: int = 0
    zero_variance_flags: np.ndarray | None = None

    def __post_init__(self):
        if self.zero_variance_flags is None:
            self.zero_variance_flags = np.zeros(self.adjacency.shape[0], dtype=bool)

    @property
    def n_rois(self) -> int:
        return self.adjacency.shape[0]


def pearson_fc(ts: ROITimeSeries, label: int = 0) -> SubjectGraph:
    """Pearson correlation graph with a zero diagonal.

    Constant ROIs get all-zero correlations and are flagged in
    ``zero_variance_flags``.
    """
    x = np.asarray(ts.values, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"time series must be 2-D, got shape {x.shape}")
    if x.shape[0] < 3:
        raise DimensionError(f"need T >= 3 time points, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise InputError(f"subject {ts.subject_id}: time series contains non-finite values")
    flat = np.ptp(x, axis=0) == 0
    # per-column rescaling leaves r unchanged and keeps the sums of squares clear of under/overflow
    scale = np.max(np.abs(x), axis=0)
    scale[scale == 0] = 1.0
    x = x / scale
    xc = x - x.mean(axis=0)
    ss = np.einsum("tv,tv->v", xc, xc)
    norm = np.sqrt(ss)
    norm[flat] = 1.0
    z = xc / norm
    corr = z.T @ z
    corr[flat, :] = 0.0
    corr[:, flat] = 0.0
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 0.0)
    np.clip(corr, -1.0, 1.0, out=corr)
    return SubjectGraph(ts.subject_id, corr, label, flat)


def binarize(graph: SubjectGraph | np.ndarray, tau: float) -> np.ndarray:
    """1 where ``|A(u, v)| >= tau`` off the diagonal, else 0."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    a = graph.adjacency if isinstance(graph, SubjectGraph) else np.asarray(graph)
    b = (np.abs(a) >= tau).astype(np.uint8)
    np.fill_diagonal(b, 0)
    return b


def validate_fc(adj: np.ndarray, subject_id: str = "?") -> np.ndarray:
    adj = np.asarray(adj, dtype=np.float64)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise DimensionError(f"subject {subject_id}: FC matrix must be square, got {adj.shape}")
    if not np.all(np.isfinite(adj)):
        raise InputError(f"subject {subject_id}: FC matrix contains non-finite values")
    if np.max(np.abs(adj - adj.T)) > 1e-12:
        raise InputError(f"subject {subject_id}: FC matrix is not symmetric")
    if np.max(np.abs(adj)) > 1 + 1e-12:
        raise InputError(f"subject {subject_id}: FC entries outside [-1, 1]")
    adj = 0.5 * (adj + adj.T)
    np.fill_diagonal(adj, 0.0)
    return np.clip(adj, -1.0, 1.0)


SPLIT_NAMES = ("train", "val", "test")


@dataclass
class Dataset:
    atlas: Atlas
    subjects: list[SubjectGraph]
    num_classes: int
    splits: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        for s in self.subjects:
            if not 0 <= s.label < self.num_classes:
                raise InputError(f"subject {s.subject_id}: label {s.label} outside 0..{self.num_classes - 1}")
            if s.n_rois != len(self.atlas):
                raise DimensionError(f"subject {s.subject_id}: {s.n_rois} ROIs but atlas has {len(self.atlas)}")

    def __len__(self):
        return len(self.subjects)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.subjects], dtype=np.int64)

    def subset(self, split: str) -> list[SubjectGraph]:
        if split == "all":
            return list(self.subjects)
        if split not in self.splits:
            raise KeyError(f"dataset has no split {split!r}")
        return [self.subjects[i] for i in self.splits[split]]

    def adjacency_stack(self, split: str = "all") -> np.ndarray:
        subs = self.subset(split)
        return np.stack([s.adjacency for s in subs]) if subs else np.zeros((0, len(self.atlas), len(self.atlas)))


def read_matrix_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row]
    try:
        return np.array([[float(v) for v in row] for row in rows], dtype=np.float64)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def write_matrix_csv(path, matrix: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(matrix):
            w.writerow([repr(float(v)) for v in row])


def load_dataset(manifest) -> Dataset:
    """Assemble a dataset from a manifest; order follows the manifest."""
    manifest = Path(manifest)
    try:
        spec = json.loads(manifest.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{manifest}: invalid JSON at line {exc.lineno}") from None
    for key in ("atlas", "num_classes", "subjects"):
        if key not in spec:
            raise SchemaError(f"{manifest}: missing field {key!r}")
    base = manifest.parent
    atlas = load_atlas(base / spec["atlas"])
    n_classes = int(spec["num_classes"])
    subjects = []
    for pos, rec in enumerate(spec["subjects"]):
        for key in ("id", "path", "kind", "label"):
            if key not in rec:
                raise SchemaError(f"{manifest}: subject record {pos} missing {key!r}")
        label = int(rec["label"])
        if not 0 <= label < n_classes:
            raise InputError(f"subject {rec['id']}: label {label} outside 0..{n_classes - 1}")
        mat = read_matrix_csv(base / rec["path"])
        if rec["kind"] == "timeseries":
            if mat.ndim != 2 or mat.shape[1] != len(atlas):
                raise DimensionError(f"subject {rec['id']}: {mat.shape[1] if mat.ndim == 2 else '?'} "
                                     f"columns but atlas has {len(atlas)} ROIs")
            g = pearson_fc(ROITimeSeries(rec["id"], mat), label)
        elif rec["kind"] == "fc":
            if mat.shape != (len(atlas), len(atlas)):
                raise DimensionError(f"subject {rec['id']}: FC shape {mat.shape} does not match "
                                     f"atlas size {len(atlas)}")
            g = SubjectGraph(rec["id"], validate_fc(mat, rec["id"]), label)
        else:
            raise SchemaError(f"subject {rec['id']}: unknown kind {rec['kind']!r}")
        subjects.append(g)
    ds = Dataset(atlas, subjects, n_classes)
    if "splits" in spec:
        ds.splits = {k: list(v) for k, v in spec["splits"].items()}
    return ds


def split_dataset(dataset: Dataset, ratios=(0.7, 0.1, 0.2), seed: int = 0) -> Dataset:
    """Label-stratified train/val/test partition, deterministic in ``seed``.

    Per class, counts are the floors of ``ratio * n`` with remainders handed
    out by largest fractional part (ties to the earlier split).
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError(f"ratios must be three positive fractions summing to 1, got {ratios}")
    labels = dataset.labels
    rng = np.random.default_rng(seed)
    parts = {k: [] for k in SPLIT_NAMES}
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            continue
        if idx.size < 3:
            raise ValueError(f"class {c} has {idx.size} subjects; need at least 3 to fill every split")
        idx = rng.permutation(idx)
        exact = np.array(ratios) * idx.size
        counts = np.floor(exact).astype(int)
        counts = np.maximum(counts, 1)
        while counts.sum() > idx.size:
            counts[int(np.argmax(counts))] -= 1
        order = np.argsort(-(exact - np.floor(exact)), kind="stable")
        k = 0
        while counts.sum() < idx.size:
            counts[order[k % 3]] += 1
            k += 1
        bounds = np.cumsum(counts)[:-1]
        for name, chunk in zip(SPLIT_NAMES, np.split(idx, bounds)):
            parts[name].extend(int(i) for i in chunk)
    dataset.splits = {k: sorted(v) for k, v in parts.items()}
    return dataset
