import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conceptneuro.evalkit import (SimilarityDistribution, ablate, accuracy, agreement_report, concept_agreement,
                                  cosine, histogram_rows, histogram_svg, importance_ranking, load_expert,
                                  random_concepts, ranking_agreement, similarity_distribution, write_csv)
from conceptneuro.errors import SchemaError
from conceptneuro.trainer import TrainConfig, train

QUICK = dict(epochs=2, batches_per_epoch=3, validate_every=1, patience=5)


def test_accuracy():
    assert accuracy([1, 0, 1, 1], [1, 0, 0, 1]) == 0.75
    with pytest.raises(ValueError):
        accuracy([], [])
    with pytest.raises(ValueError):
        accuracy([1, 0], [1])


def test_concept_agreement():
    assert concept_agreement(["a", "b", "c"], ["c", "x", "a"], 3) == pytest.approx(2 / 3)
    assert concept_agreement(["a", "b", "c"], ["c", "x", "a"], 1) == 0.0
    with pytest.raises(ValueError):
        concept_agreement(["a"], ["a", "b"], 2)


def test_ranking_agreement_rules():
    ids = ["a", "b", "c", "d"]
    scores = np.array([[4, 3, 2, 1], [1, 2, 3, 4], [4, 1, 3, 2]], float)
    expert = ["a", "b"]
    # per-subject top-2: {a,b}, {c,d}, {a,c}
    assert ranking_agreement(scores, ids, expert, 2) == pytest.approx(2 / 3)
    assert ranking_agreement(scores, ids, expert, 2, rule="subset") == pytest.approx(1 / 3)
    assert ranking_agreement(scores, ids, expert, 2, threshold=0) == 1.0
    with pytest.raises(ValueError):
        ranking_agreement(scores, ids, expert, 5)
    with pytest.raises(ValueError):
        ranking_agreement(scores, ids, expert, 2, rule="most")


def test_importance_ranking():
    W = np.zeros((2, 3))
    W[0] = [0.3, 0.7, 0.1]
    assert importance_ranking(W, ["c0", "c1", "c2"]) == ["c1", "c0", "c2"]
    assert importance_ranking(np.zeros((2, 3)), ["z", "y", "x"]) == ["x", "y", "z"]


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.floats(0.1, 5))
def test_cosine_properties(v, s):
    a = np.array(v)
    c = cosine(a, s * a)[0]
    if np.linalg.norm(a) > 1e-6:
        assert c == pytest.approx(1.0)
        assert cosine(a, -a)[0] == pytest.approx(-1.0)
    assert -1.0 <= c <= 1.0
    assert cosine(a, np.zeros(3))[0] == 0.0


def test_random_concepts_match_sizes(small_cohort):
    pool = small_cohort.pool
    a = random_concepts(pool, 12, seed=1)
    b = random_concepts(pool, 12, seed=1)
    assert a.content_hash() == b.content_hash() != random_concepts(pool, 12, seed=2).content_hash()
    for c, r in zip(pool, a):
        assert (len(c.set_a), len(c.set_b)) == (len(r.set_a), len(r.set_b))
        assert not set(r.set_a) & set(r.set_b)


def test_ablation_modes(small_cohort):
    cfg = TrainConfig(**QUICK)
    full = ablate(small_cohort.dataset, small_cohort.pool, "full", None, 0, cfg)
    same = ablate(small_cohort.dataset, small_cohort.pool, "topk", len(small_cohort.pool), 0, cfg,
                  full=full.checkpoint)
    assert same.test_acc == full.test_acc and same.checkpoint is full.checkpoint
    top2 = ablate(small_cohort.dataset, small_cohort.pool, "topk", 2, 0, cfg, full=full.checkpoint)
    assert set(top2.concept_ids) == set(importance_ranking(full.checkpoint.W, full.checkpoint.concepts.ids)[:2])
    rnd = ablate(small_cohort.dataset, small_cohort.pool, "random", None, 0, cfg)
    assert all(cid.startswith("rnd-") for cid in rnd.concept_ids)
    with pytest.raises(ValueError):
        ablate(small_cohort.dataset, small_cohort.pool, "topk", 0, 0, cfg)
    with pytest.raises(ValueError):
        ablate(small_cohort.dataset, small_cohort.pool, "none", None, 0, cfg)


def test_similarity_and_reports(small_cohort, tmp_path):
    ckpt = train(small_cohort.dataset, small_cohort.pool, TrainConfig(**QUICK))
    dist = similarity_distribution(ckpt, small_cohort.dataset, "syn-000")
    n_test = len(small_cohort.dataset.splits["test"])
    assert dist.similarities.shape == (n_test,) and dist.counts.sum() == n_test
    with pytest.raises(KeyError):
        similarity_distribution(ckpt, small_cohort.dataset, "nope")
    rows = histogram_rows(dist)
    assert len(rows) == 20 and rows[0]["bin_low"] == -1.0 and rows[-1]["bin_high"] == 1.0
    root = ET.fromstring(histogram_svg(dist))
    assert root.tag.endswith("svg") and len(root.findall("{http://www.w3.org/2000/svg}rect")) == 20
    write_csv(tmp_path / "h.csv", rows)
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == "concept_id,bin_low,bin_high,count"

    expert = {"disorder": "synthetic", "topk": {3: ["syn-000", "syn-001", "syn-002"], 10: ["syn-000"] * 10}}
    rep = agreement_report(ckpt, small_cohort.dataset, expert)
    assert rep.ks == [3]
    assert all(0.0 <= v <= 1.0 for v in rep.concept_agreement.values())


def test_histogram_counts_fixed_bins():
    d = SimilarityDistribution("c", np.array([-1.0, -0.99, 0.0, 0.5, 1.0]))
    assert d.counts.sum() == 5 and d.counts[0] == 2 and d.counts[-1] == 1 and d.counts[10] == 1


def test_load_expert(tmp_path):
    p = tmp_path / "e.json"
    p.write_text('{"topk": {"3": ["a", "b", "c"]}}')
    assert load_expert(p)["topk"] == {3: ["a", "b", "c"]}
    p.write_text("{broken")
    with pytest.raises(SchemaError):
        load_expert(p)
    p.write_text("[]")
    with pytest.raises(SchemaError):
        load_expert(p)
