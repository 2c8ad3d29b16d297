"""Connectivity concepts: parsing free text into ROI-set pairs, filtering, ranking.

A concept is a pair of disjoint ROI sets plus an optional direction prior
(+1 hyperconnectivity, -1 hypoconnectivity). Phrases are resolved against a
:class:`Lexicon` of region terms and the atlas' own names and aliases, longest
match first.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .errors import NoValidConcepts, SchemaError
from .graph import Atlas, Dataset, SubjectGraph

HEMI_WORDS = {"left": "left", "right": "right"}
DEFAULT_JACCARD = 0.8


@dataclass(frozen=True)
class Concept:
    concept_id: str
    raw_text: str
    set_a: tuple[int, ...]
    set_b: tuple[int, ...]
    direction: int | None = None
    disorder: str = ""

    def __post_init__(self):
        object.__setattr__(self, "set_a", tuple(sorted(int(i) for i in self.set_a)))
        object.__setattr__(self, "set_b", tuple(sorted(int(i) for i in self.set_b)))
        if set(self.set_a) & set(self.set_b):
            raise ValueError(f"concept {self.concept_id}: region sets overlap")
        if self.direction not in (None, 1, -1):
            raise ValueError(f"concept {self.concept_id}: direction must be +1, -1 or None")

    @property
    def nodes(self) -> tuple[int, ...]:
        return self.set_a + self.set_b

    @property
    def n_edges(self) -> int:
        return len(self.set_a) * len(self.set_b)

    def edges(self) -> frozenset:
        return frozenset(frozenset((u, v)) for u in self.set_a for v in self.set_b)

    def structure(self):
        return self.set_a, self.set_b, self.direction

    def to_record(self, score: float | None = None) -> dict:
        return {"id": self.concept_id, "disorder": self.disorder, "raw_text": self.raw_text,
                "set_a": list(self.set_a), "set_b": list(self.set_b),
                "direction": self.direction, "score": score}


@dataclass(frozen=True)
class Unresolved:
    reason: str
    raw_text: str = ""
    concept_id: str = ""
    disorder: str = ""


@dataclass
class Lexicon:
    entries: dict[str, list[int]]
    positive_keywords: tuple[str, ...]
    negative_keywords: tuple[str, ...]

    def __post_init__(self):
        self.entries = {normalize(k): sorted(set(int(i) for i in v)) for k, v in self.entries.items()}
        self.positive_keywords = tuple(normalize(k) for k in self.positive_keywords)
        self.negative_keywords = tuple(normalize(k) for k in self.negative_keywords)
        both = set(self.positive_keywords) & set(self.negative_keywords)
        if both:
            raise SchemaError(f"keywords listed as both positive and negative: {sorted(both)}")

    def validate(self, atlas: Atlas) -> None:
        for term, ids in self.entries.items():
            bad = [i for i in ids if not 0 <= i < len(atlas)]
            if bad:
                raise SchemaError(f"lexicon term {term!r} references unknown roi_ids {bad}")

    def to_json(self) -> dict:
        return {"terms": self.entries, "positive_keywords": list(self.positive_keywords),
                "negative_keywords": list(self.negative_keywords)}


def load_lexicon(path, atlas: Atlas | None = None) -> Lexicon:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON at line {exc.lineno}") from None
    for key in ("terms", "positive_keywords", "negative_keywords"):
        if key not in raw:
            raise SchemaError(f"{path}: missing field {key!r}")
    lex = Lexicon(raw["terms"], tuple(raw["positive_keywords"]), tuple(raw["negative_keywords"]))
    if atlas is not None:
        lex.validate(atlas)
    return lex


_PAREN = re.compile(r"\([^)]*\)")
_SEP = re.compile(r"[\s,;:.!?/\-\"']+")


def normalize(text: str) -> str:
    """Lowercase, drop parentheticals, turn hyphens and punctuation into spaces."""
    text = _PAREN.sub(" ", text.lower())
    return " ".join(t for t in _SEP.split(text) if t)


class _Resolver:
    """Longest-match term scanner over lexicon terms plus atlas names/aliases."""

    def __init__(self, lexicon: Lexicon, atlas: Atlas):
        self.atlas = atlas
        table: dict[tuple[str, ...], list[int]] = {}
        for name, rid in atlas.aliases().items():
            table[tuple(normalize(name).split())] = [rid]
        for term, ids in lexicon.entries.items():
            table[tuple(term.split())] = ids
        self.table = table
        self.max_len = max((len(k) for k in table), default=1)
        self.lexicon = lexicon

    def _match(self, toks, i):
        for n in range(min(self.max_len, len(toks) - i), 0, -1):
            key = tuple(toks[i:i + n])
            if key in self.table:
                return n, self.table[key]
        return 0, None

    def regions(self, phrase: str) -> list[list[int]]:
        """One ROI list per region-bearing match, hemisphere qualifiers applied."""
        toks = phrase.split()
        out, pending, i = [], None, 0
        while i < len(toks):
            n, ids = self._match(toks, i)
            if toks[i] in HEMI_WORDS and n <= 1:
                pending = HEMI_WORDS[toks[i]]
                i += 1
                continue
            if n == 0:
                i += 1
                continue
            i += n
            if not ids:
                continue
            if pending is not None:
                ids = [r for r in ids if self.atlas.hemisphere_of(r) == pending]
                pending = None
            out.append(list(ids))
        return out

    def direction(self, text: str) -> int | None:
        toks = text.split()
        kws = [(tuple(k.split()), 1) for k in self.lexicon.positive_keywords]
        kws += [(tuple(k.split()), -1) for k in self.lexicon.negative_keywords]
        for i in range(len(toks)):
            for key, sign in kws:
                if tuple(toks[i:i + len(key)]) == key:
                    return sign
        return None


def _union(groups) -> list[int]:
    return sorted({r for g in groups for r in g})


_BETWEEN = re.compile(r"\bbetween (.+?) and (.+)")
_FROM_TO = re.compile(r"\bfrom (.+?) to (.+)")
_WITH = re.compile(r"^(.*?)\bwith (.+)")
_TO = re.compile(r"^(.*?) to (.+)")
_WITHIN = re.compile(r"\b(?:within|in) (.+)")

_resolver_cache: dict[tuple[int, int], _Resolver] = {}


def _resolver(lexicon, atlas):
    key = (id(lexicon), id(atlas))
    res = _resolver_cache.get(key)
    if res is None or res.lexicon is not lexicon or res.atlas is not atlas:
        res = _Resolver(lexicon, atlas)
        _resolver_cache[key] = res
    return res


def parse_concept(text: str, lexicon: Lexicon, atlas: Atlas, concept_id: str | None = None,
                  disorder: str = "") -> Concept | Unresolved:
    """Resolve one free-text connectivity phrase into a :class:`Concept`.

    ``between X and Y``, ``from X to Y``, ``X ... with Y`` and ``X to Y`` give
    the two sides directly. ``within X`` / ``in X`` splits X into its left and
    right members, unless X itself names two regions (``A-B networks``), in
    which case the first region is set A and the rest set B.
    """
    cid = concept_id or "c-" + hashlib.sha1(text.encode("utf-8")).hexdigest()[:10]
    norm = normalize(text)
    if not norm:
        return Unresolved("empty", text, cid, disorder)
    res = _resolver(lexicon, atlas)
    direction = res.direction(norm)

    m = _BETWEEN.search(norm) or _FROM_TO.search(norm) or _WITH.search(norm) or _TO.search(norm)
    if m:
        side_a, side_b = _union(res.regions(m.group(1))), _union(res.regions(m.group(2)))
    else:
        m = _WITHIN.search(norm)
        groups = res.regions(m.group(1) if m else norm)
        distinct = []
        for g in groups:
            if g and g not in distinct:
                distinct.append(g)
        if len(distinct) >= 2:
            side_a, side_b = distinct[0], _union(distinct[1:])
        elif len(distinct) == 1 and m:
            members = distinct[0]
            side_a = [r for r in members if atlas.hemisphere_of(r) == "left"]
            side_b = [r for r in members if atlas.hemisphere_of(r) == "right"]
            if not side_a or not side_b:
                return Unresolved("no-bilateral-split", text, cid, disorder)
        elif len(distinct) == 1:
            return Unresolved("one-sided", text, cid, disorder)
        else:
            return Unresolved("no-regions", text, cid, disorder)

    if not side_a and not side_b:
        return Unresolved("no-regions", text, cid, disorder)
    if not side_a or not side_b:
        return Unresolved("one-sided", text, cid, disorder)
    shared = set(side_a) & set(side_b)
    if shared:
        if len(side_a) > len(side_b):
            side_a = [r for r in side_a if r not in shared]
        else:
            side_b = [r for r in side_b if r not in shared]
        if not side_a or not side_b:
            return Unresolved("overlap", text, cid, disorder)
    return Concept(cid, text, tuple(side_a), tuple(side_b), direction, disorder)


def render_concept(concept: Concept, atlas: Atlas) -> str:
    """Canonical text form that parses back to the same region sets and direction."""
    word = {1: "increased", -1: "decreased", None: "altered"}[concept.direction]
    a = " ".join(atlas.rois[r].name for r in concept.set_a)
    b = " ".join(atlas.rois[r].name for r in concept.set_b)
    return f"{word} connectivity between {a} and {b}"


def slug(disorder: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", disorder.lower()).strip("-") or "concept"


def parse_concepts(lines, lexicon: Lexicon, atlas: Atlas, disorder: str = "", ids=None):
    """Parse many lines; ids default to ``<disorder-slug>-NNN`` by position."""
    out = []
    for k, line in enumerate(lines):
        cid = ids[k] if ids is not None else f"{slug(disorder)}-{k + 1:03d}"
        out.append(parse_concept(line, lexicon, atlas, cid, disorder))
    return out


@dataclass
class ConceptSet:
    disorder: str
    concepts: list[Concept]
    scores: list[float] | None = None
    provenance: list[str] = field(default_factory=list)

    def __post_init__(self):
        ids = [c.concept_id for c in self.concepts]
        if len(set(ids)) != len(ids):
            raise ValueError("concept ids must be unique within a ConceptSet")

    def __len__(self):
        return len(self.concepts)

    def __iter__(self):
        return iter(self.concepts)

    @property
    def ids(self) -> list[str]:
        return [c.concept_id for c in self.concepts]

    @property
    def directions(self) -> list[int | None]:
        return [c.direction for c in self.concepts]

    def by_id(self, cid: str) -> Concept:
        for c in self.concepts:
            if c.concept_id == cid:
                return c
        raise KeyError(cid)

    def subset(self, ids) -> "ConceptSet":
        pos = {c.concept_id: k for k, c in enumerate(self.concepts)}
        idx = [pos[i] for i in ids]
        scores = [self.scores[k] for k in idx] if self.scores is not None else None
        return ConceptSet(self.disorder, [self.concepts[k] for k in idx], scores, list(self.provenance))

    def content_hash(self) -> str:
        payload = [[c.concept_id, list(c.set_a), list(c.set_b), c.direction] for c in self.concepts]
        return hashlib.sha256(json.dumps(payload, separators=(",", ":")).encode()).hexdigest()


def edge_jaccard(a: Concept, b: Concept) -> float:
    ea, eb = a.edges(), b.edges()
    union = len(ea | eb)
    return len(ea & eb) / union if union else 0.0


def filter_concepts(candidates, jaccard_threshold: float = DEFAULT_JACCARD,
                    min_set_size: int = 2) -> ConceptSet:
    """Drop unresolved, undersized and near-duplicate concepts; keeps input order."""
    disorders = {c.disorder for c in candidates if isinstance(c, Concept) and c.disorder}
    if len(disorders) > 1:
        raise ValueError(f"candidates mix disorders {sorted(disorders)}")
    kept: list[Concept] = []
    for c in candidates:
        if not isinstance(c, Concept):
            continue
        if len(c.set_a) < min_set_size or len(c.set_b) < min_set_size:
            continue
        if any(edge_jaccard(c, k) > jaccard_threshold for k in kept):
            continue
        kept.append(c)
    if not kept:
        raise NoValidConcepts("no-valid-concepts")
    return ConceptSet(disorders.pop() if disorders else "", kept)


@dataclass
class ConceptSubgraph:
    concept_id: str
    subject_id: str
    weights: np.ndarray

    @property
    def n_edges(self) -> int:
        return self.weights.size


def extract_subgraph(graph: SubjectGraph, concept: Concept) -> ConceptSubgraph:
    """The |set_a| x |set_b| block of the subject's adjacency."""
    n = graph.n_rois
    bad = [r for r in concept.nodes if not 0 <= r < n]
    if bad:
        raise IndexError(f"concept {concept.concept_id}: roi_ids {bad} outside 0..{n - 1}")
    w = graph.adjacency[np.ix_(concept.set_a, concept.set_b)].copy()
    return ConceptSubgraph(concept.concept_id, graph.subject_id, w)


def rank_concepts(dataset: Dataset, concepts: ConceptSet, split: str = "train",
                  absolute: bool = False) -> ConceptSet:
    """Score each concept by its mean subgraph connectivity over ``split``; sort descending.

    Ties go to the lexicographically smaller concept_id.
    """
    adjs = dataset.adjacency_stack(split)
    if adjs.shape[0] == 0:
        raise ValueError(f"split {split!r} is empty")
    scores = [kernels.concept_score(adjs, c.set_a, c.set_b, absolute) for c in concepts]
    order = sorted(range(len(scores)), key=lambda k: (-scores[k], concepts.concepts[k].concept_id))
    return ConceptSet(concepts.disorder, [concepts.concepts[k] for k in order],
                      [scores[k] for k in order], list(concepts.provenance))


def select_top(ranked: ConceptSet, n_c: int) -> ConceptSet:
    if n_c < 1:
        raise ValueError("n_c must be >= 1")
    scores = ranked.scores[:n_c] if ranked.scores is not None else None
    return ConceptSet(ranked.disorder, ranked.concepts[:n_c], scores, list(ranked.provenance))


def write_concepts(path, concepts: ConceptSet | list) -> None:
    if isinstance(concepts, ConceptSet):
        scores = concepts.scores or [None] * len(concepts)
        recs = [c.to_record(s) for c, s in zip(concepts.concepts, scores)]
    else:
        recs = [c.to_record() if isinstance(c, Concept) else c for c in concepts]
    with open(path, "w", encoding="utf-8") as fh:
        for r in recs:
            fh.write(json.dumps(r) + "\n")


def read_concept_records(path) -> list[dict]:
    recs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                raise SchemaError(f"{path}:{lineno}: invalid JSON") from None
            if "id" not in rec:
                raise SchemaError(f"{path}:{lineno}: record without 'id'")
            recs.append(rec)
    return recs


def read_concepts(path) -> ConceptSet:
    """Read structured concepts (records with non-empty set_a/set_b)."""
    recs = read_concept_records(path)
    concepts, scores = [], []
    for rec in recs:
        concepts.append(Concept(rec["id"], rec.get("raw_text", ""), tuple(rec.get("set_a", ())),
                                tuple(rec.get("set_b", ())), rec.get("direction"),
                                rec.get("disorder", "")))
        scores.append(rec.get("score"))
    disorders = {c.disorder for c in concepts}
    has_scores = all(s is not None for s in scores) and scores
    return ConceptSet(disorders.pop() if len(disorders) == 1 else "", concepts,
                      [float(s) for s in scores] if has_scores else None)


def with_direction(concept: Concept, direction: int | None) -> Concept:
    return replace(concept, direction=direction)
