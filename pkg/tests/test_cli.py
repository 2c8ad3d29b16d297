import json

import numpy as np
import pytest

from conceptneuro.cli import main
from conceptneuro.graph import load_dataset
from conceptneuro.resources import data_path
from conceptneuro.trainer import checkpoint_outputs, load_checkpoint


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def cohort_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cohort")
    spec = d / "spec.json"
    spec.write_text(json.dumps({"M": 40, "T": 60, "seed": 1}))
    assert main(["synth", "--spec", str(spec), "--out", str(d / "c")]) == 0
    return d / "c"


def test_synth_writes_manifest(cohort_dir):
    doc = json.loads((cohort_dir / "run_manifest.json").read_text())
    assert doc["command"] == "synth" and doc["seed"] == 1 and doc["config"]["M"] == 40
    assert json.loads((cohort_dir / "ground_truth.json").read_text())["planted"][0] == "syn-000"


def test_rank_without_dataset_is_usage_error(capsys, cohort_dir, tmp_path):
    code, _, err = run_cli(capsys, "concepts", "rank", "--in", cohort_dir / "concepts.jsonl", "--out", tmp_path / "r")
    assert code == 2
    assert json.loads(err.strip().splitlines()[-1])["error"] == "usage"


def test_domain_error_cleans_up(capsys, tmp_path):
    bad = tmp_path / "atlas.json"
    bad.write_text("[{\"id\": 0}]")
    code, _, err = run_cli(capsys, "atlas", "validate", bad)
    assert code == 1
    msg = json.loads(err.strip())
    assert set(msg) == {"error", "message"}

    out = tmp_path / "eval_out"
    code, _, err = run_cli(capsys, "eval", "--ckpt", tmp_path / "missing.json", "--dataset", bad, "--out", out)
    assert code == 1 and not out.exists()


def test_atlas_validate_bundled(capsys):
    code, out, _ = run_cli(capsys, "atlas", "validate", data_path("atlas_glasser379.json"))
    assert code == 0 and json.loads(out)["n_rois"] == 379


def test_eval_against_bundled_expert(capsys, cohort_dir, tmp_path):
    ckpt_path = tmp_path / "m.json"
    code, _, _ = run_cli(capsys, "train", "--dataset", cohort_dir / "manifest.json",
                         "--concepts", cohort_dir / "concepts.jsonl", "--out", ckpt_path,
                         "--epochs", 1, "--batches-per-epoch", 2, "--validate-every", 1)
    assert code == 0 and (tmp_path / "m.json.run.json").exists() and (tmp_path / "m.metrics.csv").exists()

    # importance then ranks syn-000, syn-001, ... syn-019 in order
    doc = json.loads(ckpt_path.read_text())
    W = np.zeros((2, 20))
    W[0] = np.arange(20, 0, -1)
    doc["bottleneck"]["head.W"]["values"] = W.reshape(-1).tolist()
    ckpt_path.write_text(json.dumps(doc))

    out = tmp_path / "report"
    code, stdout, _ = run_cli(capsys, "eval", "--ckpt", ckpt_path, "--dataset", cohort_dir / "manifest.json",
                              "--expert", data_path("expert_synthetic.json"), "--out", out)
    assert code == 0
    summary = json.loads(stdout)
    assert summary["agreement"]["concept"] == {"3": 2 / 3, "5": 3 / 5, "10": 4 / 10}

    expert = json.loads(data_path("expert_synthetic.json").read_text())["topk"]
    ckpt = load_checkpoint(ckpt_path)
    ds = load_dataset(cohort_dir / "manifest.json")
    s = checkpoint_outputs(ckpt, ds, ds.splits["test"])["s"]
    ids = np.array(ckpt.concepts.ids)
    for k in (3, 5, 10):
        hits = []
        for row in s:
            order = np.lexsort((ids, -row))
            hits.append(len(set(ids[order[:k]]) & set(expert[str(k)])) >= -(-k // 2))
        assert summary["agreement"]["ranking"][str(k)] == pytest.approx(np.mean(hits))
    lines = (out / "agreement.csv").read_text().splitlines()
    assert lines[0] == "disorder,k,concept_agreement,ranking_agreement" and len(lines) == 4
    assert (out / "run_manifest.json").exists()


def test_topk_ablation_requires_k(capsys, cohort_dir, tmp_path):
    code, _, _ = run_cli(capsys, "ablate", "--dataset", cohort_dir / "manifest.json", "--concepts",
                         cohort_dir / "concepts.jsonl", "--mode", "topk", "--seeds", 0, "--out", tmp_path / "a.csv")
    assert code == 2
