"""Command-line entry point: ``conceptneuro <command> ...``.

Exit codes: 0 success, 1 domain error, 2 usage error. Failures print one JSON
line ``{"error": code, "message": text}`` on stderr and remove any outputs the
failed run had created. Every successful run writes a run manifest next to its
primary output.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import shutil
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .concepts import (Unresolved, filter_concepts, load_lexicon, parse_concept,
                       rank_concepts, read_concept_records, read_concepts, select_top, slug,
                       write_concepts)
from .errors import ConceptNeuroError
from .graph import load_atlas, load_dataset, write_matrix_csv
from .resources import bundled_atlas, bundled_lexicon
from .trainer import TrainConfig, atomic_write_text


class Run:
    """Tracks outputs so a failed command can remove what it created."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.args = args
        self.started = time.time()
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []
        self._created: list[Path] = []
        self.config: dict = {}
        self.seed = None

    def input(self, path) -> Path:
        p = Path(path)
        if p.is_file():
            self.inputs[str(p)] = hashlib.sha256(p.read_bytes()).hexdigest()
        return p

    def output(self, path) -> Path:
        p = Path(path)
        if not p.exists():
            self._created.append(p)
        self.outputs.append(p)
        return p

    def output_dir(self, path) -> Path:
        p = Path(path)
        if not p.exists():
            self._created.append(p)
            p.mkdir(parents=True)
        self.outputs.append(p)
        return p

    def cleanup(self) -> None:
        for p in reversed(self._created):
            if p.is_dir():
                shutil.rmtree(p, ignore_errors=True)
            elif p.exists():
                p.unlink()

    def write_manifest(self, path) -> None:
        doc = {"command": self.command, "version": __version__,
               "argv": sys.argv[1:], "config": self.config, "inputs": self.inputs,
               "outputs": [str(p) for p in self.outputs], "seed": self.seed,
               "started": self.started, "finished": time.time()}
        atomic_write_text(path, json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n")


def _manifest_for(path: Path) -> Path:
    return path / "run_manifest.json" if path.is_dir() else path.with_name(path.name + ".run.json")


def _write(run: Run, path, text: str) -> Path:
    p = run.output(path)
    atomic_write_text(p, text)
    return p


# ---------------------------------------------------------------- commands


def cmd_atlas_validate(run: Run, a) -> None:
    atlas = load_atlas(run.input(a.atlas))
    hemi: dict[str, int] = {}
    for r in atlas.rois:
        hemi[r.hemisphere] = hemi.get(r.hemisphere, 0) + 1
    print(json.dumps({"ok": True, "n_rois": len(atlas), "hemispheres": hemi}, sort_keys=True))


def cmd_fc_compute(run: Run, a) -> None:
    ds = load_dataset(run.input(a.manifest))
    out = run.output_dir(a.out)
    subjects = []
    for g in ds.subjects:
        rel = f"{g.subject_id}.csv"
        write_matrix_csv(out / rel, g.adjacency)
        subjects.append({"id": g.subject_id, "path": rel, "kind": "fc", "label": g.label,
                         "zero_variance_rois": [int(i) for i in np.flatnonzero(g.zero_variance_flags)]})
    ds.atlas.save(out / "atlas.json")
    manifest = {"atlas": "atlas.json", "num_classes": ds.num_classes, "subjects": subjects}
    if ds.splits:
        manifest["splits"] = ds.splits
    atomic_write_text(out / "manifest.json", json.dumps(manifest, indent=1) + "\n")
    run.write_manifest(_manifest_for(out))


def cmd_concepts_generate(run: Run, a) -> None:
    from .generation import (PromptSpec, RecordStore, build_prompt, generate_concepts,
                             load_disorder_terms, provider_from_config)

    provider = provider_from_config(json.loads(run.input(a.provider).read_text(encoding="utf-8")))
    terms = load_disorder_terms(a.disorder, a.terms)
    prompt = build_prompt(PromptSpec(a.disorder, tuple(terms)))
    out = Path(a.out) if a.out else None
    records = Path(a.records) if a.records else (out.with_name(out.name + ".records.jsonl") if out else None)
    if records is not None and not records.exists():
        run.output(records)
    lines = generate_concepts(provider, prompt, RecordStore(records) if records else None, a.disorder)
    text = "\n".join(lines) + "\n"
    if out is None:
        sys.stdout.write(text)
        return
    _write(run, out, text)
    run.config = {"disorder": a.disorder, "provider": provider.name}
    run.write_manifest(_manifest_for(out))


def _atlas_and_lexicon(run: Run, a):
    atlas = load_atlas(run.input(a.atlas)) if a.atlas else bundled_atlas()
    lexicon = load_lexicon(run.input(a.lexicon), atlas) if a.lexicon else bundled_lexicon()
    return atlas, lexicon


def _raw_lines(path: Path) -> list[tuple[str | None, str]]:
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".jsonl":
        return [(r.get("id"), r.get("raw_text", "")) for r in read_concept_records(path)]
    return [(None, ln.strip()) for ln in text.splitlines() if ln.strip()]


def cmd_concepts_parse(run: Run, a) -> None:
    atlas, lexicon = _atlas_and_lexicon(run, a)
    items = _raw_lines(run.input(a.inp))
    records = []
    resolved = 0
    for n, (cid, text) in enumerate(items, 1):
        cid = cid or f"{slug(a.disorder or 'concept')}-{n:03d}"
        res = parse_concept(text, lexicon, atlas, cid, a.disorder or "")
        if isinstance(res, Unresolved):
            records.append({"id": cid, "disorder": a.disorder or "", "raw_text": text,
                            "set_a": [], "set_b": [], "direction": None, "unresolved": res.reason})
        else:
            resolved += 1
            records.append(res.to_record())
    out = _write(run, a.out, "".join(json.dumps(r) + "\n" for r in records))
    print(json.dumps({"lines": len(items), "resolved": resolved}))
    run.write_manifest(_manifest_for(out))


def _structured(records: list[dict]):
    from .concepts import Concept

    out = []
    for r in records:
        if r.get("unresolved") or not r.get("set_a") or not r.get("set_b"):
            out.append(Unresolved(r.get("unresolved", "no-regions"), r.get("raw_text", ""), r["id"]))
        else:
            out.append(Concept(r["id"], r.get("raw_text", ""), tuple(r["set_a"]), tuple(r["set_b"]),
                               r.get("direction"), r.get("disorder", "")))
    return out


def cmd_concepts_filter(run: Run, a) -> None:
    kept = filter_concepts(_structured(read_concept_records(run.input(a.inp))), a.jaccard, a.min_size)
    out = run.output(a.out)
    write_concepts(out, kept)
    run.config = {"jaccard": a.jaccard, "min_size": a.min_size}
    run.write_manifest(_manifest_for(out))


def cmd_concepts_rank(run: Run, a) -> None:
    ds = load_dataset(run.input(a.dataset))
    concepts = read_concepts(run.input(a.inp))
    for c in concepts:
        bad = [r for r in c.nodes if not 0 <= r < len(ds.atlas)]
        if bad:
            raise ConceptNeuroError(f"concept {c.concept_id}: roi ids {bad} outside the dataset atlas")
    ranked = rank_concepts(ds, concepts, a.split, a.absolute)
    if a.top:
        ranked = select_top(ranked, a.top)
    out = run.output(a.out)
    write_concepts(out, ranked)
    run.config = {"split": a.split, "absolute": a.absolute, "top": a.top}
    run.write_manifest(_manifest_for(out))


def _train_config(run: Run, a) -> TrainConfig:
    cfg = TrainConfig.from_file(run.input(a.config)) if a.config else TrainConfig()
    overrides = {}
    for name in ("epochs", "batches_per_epoch", "patience", "validate_every", "lr", "lambda_sp",
                 "lambda_dir", "n_c", "activation", "seed", "jobs", "tau", "dropout"):
        v = getattr(a, name, None)
        if v is not None:
            overrides[name] = v
    cfg = replace(cfg, **overrides)
    run.config = cfg.to_dict()
    run.seed = cfg.seed
    return cfg


def cmd_train(run: Run, a) -> None:
    from .evalkit import write_csv
    from .trainer import save_checkpoint, train

    cfg = _train_config(run, a)
    ds = load_dataset(run.input(a.dataset))
    concepts = read_concepts(run.input(a.concepts))
    out = run.output(a.out)
    metrics = run.output(a.metrics or out.with_name(out.stem + ".metrics.csv"))
    history: list = []
    ckpt = train(ds, concepts, cfg, history)
    save_checkpoint(ckpt, out)
    write_csv(metrics, history, ["epoch", "loss", "ce", "l1", "hinge", "val_acc", "last_batch_loss"])
    print(json.dumps({"best_val_acc": ckpt.best_val_acc, "epoch": ckpt.epoch,
                      "final_train_loss": ckpt.final_train_loss}))
    run.write_manifest(_manifest_for(out))


def cmd_eval(run: Run, a) -> None:
    from threadpoolctl import threadpool_limits

    from .evalkit import (agreement_report, agreement_rows, load_expert, report_json, split_accuracy,
                          write_csv)
    from .trainer import load_checkpoint

    ckpt = load_checkpoint(run.input(a.ckpt))
    ds = load_dataset(run.input(a.dataset))
    out = run.output_dir(a.out)
    with threadpool_limits(limits=a.jobs or 1):
        acc = split_accuracy(ckpt, ds, a.split)
        write_csv(out / "accuracy.csv", [{"split": a.split, "n": len(ds.subset(a.split)), "accuracy": acc}])
        summary = {"accuracy": acc, "split": a.split}
        if a.expert:
            rep = agreement_report(ckpt, ds, load_expert(run.input(a.expert)), a.split)
            write_csv(out / "agreement.csv", agreement_rows(rep),
                      ["disorder", "k", "concept_agreement", "ranking_agreement"])
            atomic_write_text(out / "agreement.json", report_json(rep))
            summary["agreement"] = {"concept": {str(k): v for k, v in rep.concept_agreement.items()},
                                    "ranking": {str(k): v for k, v in rep.ranking_agreement.items()}}
    atomic_write_text(out / "eval.json", json.dumps(summary, indent=1, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    run.write_manifest(_manifest_for(out))


def cmd_ablate(run: Run, a) -> None:
    from .evalkit import ablate, write_csv

    cfg = _train_config(run, a)
    ds = load_dataset(run.input(a.dataset))
    pool = read_concepts(run.input(a.concepts))
    if cfg.n_c:
        pool = select_top(pool, cfg.n_c)
    out = run.output(a.out)
    rows = []
    for seed in a.seeds:
        res = ablate(ds, pool, a.mode, a.k, seed, cfg)
        rows.append(res.row())
    mean = float(np.mean([r["test_acc"] for r in rows]))
    write_csv(out, rows, ["mode", "k", "seed", "test_acc", "n_concepts"])
    print(json.dumps({"mode": a.mode, "mean_test_acc": mean}))
    run.seed = list(a.seeds)
    run.write_manifest(_manifest_for(out))


def cmd_report(run: Run, a) -> None:
    from .evalkit import histogram_rows, histogram_svg, similarity_distribution, write_csv
    from .trainer import load_checkpoint

    ckpt = load_checkpoint(run.input(a.ckpt))
    ds = load_dataset(run.input(a.dataset))
    dist = similarity_distribution(ckpt, ds, a.concept, a.split)
    out = run.output_dir(a.out)
    stem = slug(a.concept)
    write_csv(out / f"similarity_{stem}.csv", histogram_rows(dist),
              ["concept_id", "bin_low", "bin_high", "count"])
    atomic_write_text(out / f"similarity_{stem}.svg", histogram_svg(dist))
    print(json.dumps({"concept": a.concept, "mean_similarity": dist.mean, "n": int(dist.counts.sum())}))
    run.write_manifest(_manifest_for(out))


def cmd_synth(run: Run, a) -> None:
    from .synth import CohortSpec, generate_cohort, write_cohort

    raw = json.loads(run.input(a.spec).read_text(encoding="utf-8")) if a.spec else {}
    if a.seed is not None:
        raw["seed"] = a.seed
    spec = CohortSpec.from_dict(raw)
    out = run.output_dir(a.out)
    paths = write_cohort(generate_cohort(spec), out)
    run.config = spec.to_dict()
    run.seed = spec.seed
    print(json.dumps({k: str(v) for k, v in paths.items()}, sort_keys=True))
    run.write_manifest(_manifest_for(out))


# ---------------------------------------------------------------- parser


def _train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training overrides (take precedence over --config)")
    g.add_argument("--config", help="TrainConfig JSON file")
    g.add_argument("--seed", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--batches-per-epoch", dest="batches_per_epoch", type=int)
    g.add_argument("--patience", type=int)
    g.add_argument("--validate-every", dest="validate_every", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--lambda-sp", dest="lambda_sp", type=float)
    g.add_argument("--lambda-dir", dest="lambda_dir", type=float)
    g.add_argument("--n-c", dest="n_c", type=int, help="keep the first N_c concepts of the input")
    g.add_argument("--activation", choices=["sigmoid", "linear"])
    g.add_argument("--tau", type=float)
    g.add_argument("--dropout", type=float)
    g.add_argument("--jobs", type=int, help="BLAS threads; >1 gives up bitwise reproducibility")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="conceptneuro", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    atlas = sub.add_parser("atlas", help="atlas utilities").add_subparsers(dest="action", required=True)
    p = atlas.add_parser("validate", help="check an atlas JSON file")
    p.add_argument("atlas")
    p.set_defaults(func=cmd_atlas_validate)

    fc = sub.add_parser("fc", help="functional connectivity").add_subparsers(dest="action", required=True)
    p = fc.add_parser("compute", help="Pearson FC matrices for every subject of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_fc_compute)

    con = sub.add_parser("concepts", help="concept generation and processing").add_subparsers(
        dest="action", required=True)
    p = con.add_parser("generate", help="ask a provider for raw concept lines")
    p.add_argument("--disorder", required=True)
    p.add_argument("--provider", required=True, help='provider JSON, e.g. {"kind": "fixture"}')
    p.add_argument("--terms", help="JSON term list overriding the bundled table")
    p.add_argument("--out", help="raw lines file (stdout if omitted)")
    p.add_argument("--records", help="generation record store (JSON Lines)")
    p.set_defaults(func=cmd_concepts_generate)
    for name, func, helptext in (("parse", cmd_concepts_parse, "resolve raw lines into ROI sets"),
                                 ("filter", cmd_concepts_filter, "drop undersized and duplicate concepts"),
                                 ("rank", cmd_concepts_rank, "score concepts on a dataset split")):
        p = con.add_parser(name, help=helptext)
        p.add_argument("--in", dest="inp", required=True, help="input text or JSONL file")
        p.add_argument("--out", required=True)
        p.add_argument("--atlas", help="atlas JSON (bundled atlas if omitted)")
        p.add_argument("--lexicon", help="lexicon JSON (bundled lexicon if omitted)")
        p.add_argument("--dataset", help="dataset manifest (required for rank)")
        p.add_argument("--disorder", default="")
        p.add_argument("--jaccard", type=float, default=0.8)
        p.add_argument("--min-size", dest="min_size", type=int, default=2)
        p.add_argument("--split", default="train")
        p.add_argument("--absolute", action="store_true", help="rank by mean |weight|")
        p.add_argument("--top", type=int, help="keep only the N highest-ranked concepts")
        p.set_defaults(func=func, needs_dataset=name == "rank")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--concepts", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", help="metrics CSV (default: <out stem>.metrics.csv)")
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy and expert agreement of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--expert", help="expert top-k JSON")
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="full / random / top-k concept ablation")
    p.add_argument("--dataset", required=True)
    p.add_argument("--concepts", required=True)
    p.add_argument("--mode", required=True, choices=["full", "random", "topk"])
    p.add_argument("--k", type=int)
    p.add_argument("--seeds", type=int, nargs="+", required=True)
    p.add_argument("--out", required=True, help="ablation CSV")
    _train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="similarity histogram of one concept")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--concept", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--spec", help="CohortSpec JSON (defaults if omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return ap


def _fail(code: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(a, "needs_dataset", False) and not a.dataset:
        parser.print_usage(sys.stderr)
        _fail("usage", "concepts rank requires --dataset")
        return 2
    if a.command == "ablate" and a.mode == "topk" and a.k is None:
        parser.print_usage(sys.stderr)
        _fail("usage", "ablate --mode topk requires --k")
        return 2
    command = " ".join(x for x in (a.command, getattr(a, "action", None)) if x)
    run = Run(command, a)
    try:
        a.func(run, a)
    except ConceptNeuroError as exc:
        run.cleanup()
        _fail(exc.code, str(exc))
        return 1
    except OSError as exc:
        run.cleanup()
        _fail("io", f"{exc.filename}: {exc.strerror}" if exc.filename else str(exc))
        return 1
    except (ValueError, KeyError, IndexError) as exc:
        run.cleanup()
        _fail(type(exc).__name__, exc.args[0] if exc.args and isinstance(exc.args[0], str) else str(exc))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
