import json

import numpy as np
import pytest

from conceptneuro.errors import CheckpointError, SchemaError
from conceptneuro.synth import CohortSpec, generate_cohort
from conceptneuro.trainer import (PartCache, TrainConfig, balanced_batches, load_checkpoint, predict_labels,
                                  run_model, save_checkpoint, stratified_batches, train)

QUICK = dict(epochs=4, batches_per_epoch=4, validate_every=2, patience=5)


def test_balanced_batches_counts():
    idx = np.arange(220)
    labels = np.r_[np.ones(20, int), np.zeros(200, int)]
    cfg = TrainConfig(batches_per_epoch=10)
    batches = balanced_batches(idx, labels, cfg, seed=0, epoch=1)
    assert len(batches) == 10
    seen_pos = set()
    for b in batches:
        assert np.sum(labels[b] == 1) == 16 and np.sum(labels[b] == 0) == 16
        assert len(set(b.tolist())) == 32
        seen_pos |= set(b[labels[b] == 1].tolist())
    assert len(seen_pos) == 20
    again = balanced_batches(idx, labels, cfg, seed=0, epoch=1)
    assert all(np.array_equal(x, y) for x, y in zip(batches, again))
    other = balanced_batches(idx, labels, cfg, seed=0, epoch=2)
    assert not all(np.array_equal(x, y) for x, y in zip(batches, other))


def test_short_class_is_topped_up():
    idx = np.arange(108)
    labels = np.r_[np.ones(8, int), np.zeros(100, int)]
    for b in balanced_batches(idx, labels, TrainConfig(batches_per_epoch=3), 1, 1):
        pos = b[labels[b] == 1]
        assert pos.size == 16 and set(pos.tolist()) == set(range(8))


def test_stratified_batches_cover_classes():
    idx = np.arange(90)
    labels = np.repeat([0, 1, 2], [60, 25, 5])
    for b in stratified_batches(idx, labels, TrainConfig(batches_per_epoch=4), 0, 1):
        assert b.size == 32 and set(labels[b].tolist()) == {0, 1, 2}


def test_config_validation(tmp_path):
    with pytest.raises(SchemaError):
        TrainConfig.from_dict({"epochz": 3})
    with pytest.raises(ValueError):
        TrainConfig(dropout=1.0)
    with pytest.raises(ValueError):
        TrainConfig(lambda_sp=-1.0)
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"epochs": 7, "seed": 3}))
    assert TrainConfig.from_file(p).epochs == 7
    assert TrainConfig(jobs=1).hash() == TrainConfig(jobs=4).hash() != TrainConfig(seed=1).hash()


def test_separable_cohort_trains():
    co = generate_cohort(CohortSpec(seed=0))
    ckpt = train(co.dataset, co.pool, TrainConfig(epochs=5, batches_per_epoch=20, validate_every=5, seed=0))
    idx = co.dataset.splits["train"]
    p = run_model(ckpt.params, ckpt.buffers, PartCache(co.dataset, ckpt.concepts, 0.3), idx)["p"]
    assert np.mean(predict_labels(p) == co.dataset.labels[idx]) >= 0.95


def test_flat_metric_stops_after_two_validations(small_cohort):
    history = []
    cfg = TrainConfig(epochs=50, batches_per_epoch=2, validate_every=1, patience=1, lr=0.0, seed=0)
    ckpt = train(small_cohort.dataset, small_cohort.pool, cfg, history)
    assert len(history) == 2
    assert history[0]["val_acc"] == history[1]["val_acc"]
    # ties keep the later state
    assert ckpt.epoch == 2


def test_same_seed_same_loss(small_cohort):
    cfg = TrainConfig(seed=5, **QUICK)
    a = train(small_cohort.dataset, small_cohort.pool, cfg)
    b = train(small_cohort.dataset, small_cohort.pool, cfg)
    assert a.final_train_loss == b.final_train_loss
    c = train(small_cohort.dataset, small_cohort.pool, TrainConfig(seed=6, **QUICK))
    assert c.final_train_loss != a.final_train_loss


def test_n_c_truncates_concepts(small_cohort):
    ckpt = train(small_cohort.dataset, small_cohort.pool, TrainConfig(n_c=2, **QUICK))
    assert ckpt.concepts.ids == small_cohort.pool.ids[:2] and ckpt.W.shape == (2, 2)


@pytest.fixture(scope="module")
def quick_ckpt(small_cohort):
    return train(small_cohort.dataset, small_cohort.pool, TrainConfig(seed=2, **QUICK))


def test_checkpoint_round_trip_bytes(tmp_path, quick_ckpt, small_cohort):
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_checkpoint(quick_ckpt, p1)
    loaded = load_checkpoint(p1, small_cohort.pool)
    save_checkpoint(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    for k, v in quick_ckpt.params.items():
        assert np.array_equal(v, loaded.params[k])
    assert not list(tmp_path.glob(".*.tmp"))


def test_truncated_checkpoint_refused(tmp_path, quick_ckpt):
    p = tmp_path / "a.json"
    save_checkpoint(quick_ckpt, p)
    p.write_bytes(p.read_bytes()[: p.stat().st_size // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_concept_hash_mismatch_refused(tmp_path, quick_ckpt, small_cohort):
    p = tmp_path / "a.json"
    save_checkpoint(quick_ckpt, p)
    with pytest.raises(CheckpointError):
        load_checkpoint(p, small_cohort.pool.subset(small_cohort.pool.ids[:3]))
    doc = json.loads(p.read_text())
    doc["concepts"][0]["set_a"] = [39]
    p.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
    doc["version"] = "0"
    p.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(p)


def test_missing_split_is_an_input_error(small_cohort):
    import copy

    from conceptneuro.errors import InputError

    ds = copy.copy(small_cohort.dataset)
    ds.splits = {"train": ds.splits["train"], "val": []}
    with pytest.raises(InputError):
        train(ds, small_cohort.pool, TrainConfig(**QUICK))
