"""Command-line interface: ``conceptaug <subcommand> ...``.

Every command exits 0 on success; on failure it prints a single line
``conceptaug: error: <kind>: <message>`` to stderr and exits 1 (2 for usage
errors).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import metrics
from .annotator import (annotate, attach_annotations, import_external_annotations, raw_codes_predict,
                        read_annotations, write_annotations)
from .corpus import coverage_stats, phrases_per_concept, read_documents, read_split, select
from .experiments import lambda_sweep, write_sweep
from .model import ModelConfig, POLICIES
from .multitask import LAMBDA_GRID, AuxConfig
from .ontology import load_dictionary, load_labels, load_ontology
from .synthetic import SyntheticSpec, generate_synthetic
from .training import TrainerConfig, config_hash, evaluate_docs, fit, load_checkpoint, save_checkpoint

log = logging.getLogger("conceptaug")


class CLIError(Exception):
    def __init__(self, kind, msg, status=1):
        super().__init__(msg)
        self.kind = kind
        self.status = status


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError("usage", message, 2)


# --- helpers --------------------------------------------------------------------

def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(outdir, chash: str, paths, **extra) -> None:
    """Hashes of line-format outputs whose own schema has no room for the config hash."""
    out = Path(outdir)
    files = {Path(p).name: _sha256(p) for p in sorted(map(str, paths))}
    _dump({"config_hash": chash, "files": files, **extra}, out / "manifest.json")


def _need(path, what):
    if path is None or not Path(path).exists():
        raise CLIError("missing-input", f"{what} not found: {path}")
    return Path(path)


def _data_path(args, name, filename):
    explicit = getattr(args, name, None)
    if explicit:
        return Path(explicit)
    if args.data:
        return Path(args.data) / filename
    return None


def load_data(args, need_annotations=False):
    """Documents (with annotations attached when available), labels, split, ontology."""
    docs = read_documents(_need(_data_path(args, "documents", "documents.jsonl"), "documents"))
    labels = load_labels(_need(_data_path(args, "labels", "labels.txt"), "labels"))
    split = read_split(_need(_data_path(args, "split", "split.json"), "split"))
    onto_path = _data_path(args, "ontology", "ontology.tsv")
    ontology = load_ontology(onto_path) if onto_path and onto_path.exists() else None
    ann_path = _data_path(args, "annotations", "annotations.jsonl")
    if ann_path is not None and ann_path.exists():
        attach_annotations(docs, read_annotations(ann_path))
    elif need_annotations:
        raise CLIError("missing-input", f"annotations required but not found: {ann_path}")
    try:
        parts = {name: select(docs, ids) for name, ids in split.as_dict().items()}
    except KeyError as e:
        raise CLIError("bad-split", f"split references unknown document {e.args[0]!r}") from None
    return parts, labels, ontology


def _dataclass_kwargs(cls, source: dict):
    names = {f.name for f in fields(cls)}
    return {k: v for k, v in source.items() if k in names and v is not None}


def build_configs(args):
    """Model, trainer and auxiliary configs from an optional JSON file then flags."""
    base = json.loads(Path(args.config_file).read_text()) if args.config_file else {}
    flat = {**base.get("model", {}), **base.get("trainer", {}), **{k: v for k, v in base.items()
                                                                     if not isinstance(v, dict)}}
    flags = {
        "policy": args.policy, "learning_rate": args.lr, "batch_size": args.batch_size,
        "embed_dim": args.embed_dim, "conv_dim": args.conv_dim, "kernel_size": args.kernel_size,
        "dropout": args.dropout, "max_epochs": args.max_epochs, "patience": args.patience,
        "criterion": args.criterion, "seed": args.seed, "min_df": args.min_df,
    }
    flat.update({k: v for k, v in flags.items() if v is not None})
    if args.overlap_attention:
        flat["overlap_attention"] = True
    if args.gram:
        flat["gram"] = True
    model_cfg = ModelConfig(**_dataclass_kwargs(ModelConfig, flat))
    trainer = TrainerConfig(**_dataclass_kwargs(TrainerConfig, flat))
    aux_src = dict(base.get("aux", {}))
    for k, v in (("head", args.aux_head), ("share_point", args.share_point), ("weight", args.aux_weight)):
        if v is not None:
            aux_src[k] = v
    aux = AuxConfig(**aux_src) if aux_src else None
    return model_cfg, trainer, aux


# --- commands -------------------------------------------------------------------

def _parse_variants(text: str):
    if ":" not in text:
        return int(text)
    out = {}
    for part in text.split(","):
        k, w = part.split(":")
        out[int(k)] = float(w)
    return out


def cmd_simulate(args):
    src = json.loads(Path(args.spec).read_text()) if args.spec else {}
    flags = {"seed": args.seed, "coverage": args.coverage, "specificity_mismatch": args.mismatch,
             "label_mode": args.label_mode, "vocab_size": args.vocab_size, "concept_count": args.concepts,
             "label_count": args.label_count, "mean_doc_length": args.doc_length,
             "docs_per_split": tuple(args.docs) if args.docs else None,
             "variants_per_concept": _parse_variants(args.variants) if args.variants else None}
    src.update({k: v for k, v in flags.items() if v is not None})
    spec = SyntheticSpec.from_dict(src)
    corpus = generate_synthetic(spec)
    out = Path(args.out)
    paths = corpus.write(out)
    chash = config_hash(json.loads(spec.to_json()))
    _write_stats(corpus.documents, out / "stats.json", chash, seed=spec.seed)
    write_manifest(out, chash, list(paths.values()) + [out / "stats.json"], seed=spec.seed)
    print(out)


def _write_stats(docs, path, chash, **extra):
    stats = coverage_stats(docs)
    stats["phrases_per_concept"] = phrases_per_concept(docs)
    _dump({**stats, "config_hash": chash, **extra}, path)


def cmd_annotate(args):
    docs = read_documents(_need(args.documents, "documents"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.external:
        ext = _need(args.external, "external annotations")
        for d in docs:
            d.annotations = import_external_annotations(ext, d)
        source = {"external": _sha256(ext)}
    else:
        if not args.dictionary or not Path(args.dictionary).exists():
            raise CLIError("missing-input", f"dictionary not found: {args.dictionary}")
        ontology = load_ontology(args.ontology) if args.ontology else None
        dictionary = load_dictionary(args.dictionary, ontology)
        with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
            for d, anns in zip(docs, pool.map(lambda doc: annotate(doc.tokens, dictionary), docs)):
                d.annotations = anns
        source = {"dictionary": _sha256(args.dictionary)}
    chash = config_hash({"documents": _sha256(args.documents), **source})
    write_annotations(docs, out / "annotations.jsonl")
    _write_stats(docs, out / "stats.json", chash)
    write_manifest(out, chash, [out / "annotations.jsonl", out / "stats.json"])
    print(out / "annotations.jsonl")


def _run_config(model_cfg, trainer, aux, extra=None):
    return {"model": model_cfg.to_dict(), "trainer": trainer.to_dict(),
            "aux": aux.to_dict() if aux is not None else None, **(extra or {})}


def cmd_train(args):
    model_cfg, trainer, aux = build_configs(args)
    needs_ann = POLICIES[model_cfg.policy].needs_annotations or (aux is not None and aux.weight > 0)
    parts, labels, ontology = load_data(args, need_annotations=needs_ann)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = _run_config(model_cfg, trainer, aux)
    chash = config_hash(run)
    t = fit(parts["train"], parts["dev"], labels, model_cfg, trainer, ontology, aux, out / "train_log.jsonl")
    meta = {"config_hash": chash, "seed": trainer.seed}
    save_checkpoint(out / "model.pt", t, meta)
    dev = evaluate_docs(t.model, t.encoder, parts["dev"], trainer.threshold, t.train_counts)
    dev.write(out / "dev_metrics.json", config_hash=chash, seed=trainer.seed, split="dev")
    _dump({**run, "config_hash": chash, "seed": trainer.seed, "vocab_hash": t.vocab_hash,
           "label_hash": t.label_hash, "best_epoch": t.result.best_epoch, "epochs_run": t.result.epochs_run},
          out / "config.json")
    write_manifest(out, chash, [out / "train_log.jsonl", out / "model.pt"], seed=trainer.seed)
    print(out / "model.pt")


def cmd_evaluate(args):
    out = Path(args.out)
    if args.raw_codes:
        return _evaluate_raw_codes(args, out)
    trained = load_checkpoint(_need(args.checkpoint, "checkpoint"))
    policy = trained.model.policy
    parts, labels, _ = load_data(args, need_annotations=policy.needs_annotations)
    if labels.digest() != trained.label_hash:
        raise CLIError("config-mismatch", f"label space hash {labels.digest()} differs from checkpoint's "
                                          f"{trained.label_hash}")
    if args.train_config:
        cfg = json.loads(Path(args.train_config).read_text())
        if cfg.get("vocab_hash") != trained.vocab_hash:
            raise CLIError("config-mismatch", f"vocabulary hash {cfg.get('vocab_hash')} in {args.train_config} "
                                              f"differs from checkpoint's {trained.vocab_hash}")
    threshold = trained.trainer.threshold if trained.trainer else 0.5
    rep = evaluate_docs(trained.model, trained.encoder, parts[args.part], threshold, trained.train_counts)
    rep.write(out, config_hash=trained.metadata.get("config_hash"), seed=trained.metadata.get("seed"),
              split=args.part, policy=trained.model.config.policy)
    print(out)


def _evaluate_raw_codes(args, out):
    parts, labels, _ = load_data(args, need_annotations=True)
    docs = parts[args.part]
    pred = np.stack([raw_codes_predict(d.annotations or [], labels) for d in docs])
    gold = np.stack([labels.encode(d.labels) for d in docs])
    counts = np.sum([labels.encode(d.labels) for d in parts["train"]], axis=0)
    rep = metrics.evaluate_binary(pred, gold, seed=args.seed or 0, train_counts=counts)
    chash = config_hash({"raw_codes": True, "labels": labels.digest(), "part": args.part, "seed": args.seed or 0})
    rep.write(out, config_hash=chash, seed=args.seed or 0, split=args.part, policy="raw-codes")
    print(out)


def cmd_sweep_lambda(args):
    model_cfg, trainer, aux = build_configs(args)
    aux = aux or AuxConfig()
    parts, labels, ontology = load_data(args, need_annotations=True)
    rows = lambda_sweep(parts["train"], parts["dev"], labels, ontology, args.grid or LAMBDA_GRID,
                        model_cfg, trainer, aux)
    out = Path(args.out)
    write_sweep(rows, out)
    print(out)


def cmd_plot(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    from .plots import PlotError, bucket_chart, phrases_histogram
    made = []
    try:
        if args.metrics:
            runs = {}
            for item in args.metrics:
                name, _, path = item.rpartition("=")
                text = _need(path, "metrics file").read_text().strip()
                runs[name or Path(path).stem] = json.loads(text) if text else {}
            bucket_chart(runs, out / "bucket_f1.png")
            made.append(out / "bucket_f1.png")
        if args.stats:
            text = _need(args.stats, "stats file").read_text().strip()
            stats = json.loads(text) if text else {}
            phrases_histogram(stats.get("phrases_per_concept") or {}, out / "phrases_per_concept.png")
            made.append(out / "phrases_per_concept.png")
    except PlotError as e:
        raise CLIError("empty-input", str(e)) from None
    if not made:
        raise CLIError("usage", "nothing to plot: give --metrics and/or --stats", 2)
    for p in made:
        print(p)


# --- parser -----------------------------------------------------------------------

def _data_args(p):
    p.add_argument("--data", help="bundle directory (documents.jsonl, labels.txt, split.json, ...)")
    p.add_argument("--documents")
    p.add_argument("--labels")
    p.add_argument("--split")
    p.add_argument("--annotations")
    p.add_argument("--ontology")


def _model_args(p):
    p.add_argument("--config-file", help="JSON with model/trainer/aux settings; flags override")
    p.add_argument("--policy", choices=sorted(POLICIES))
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--conv-dim", type=int)
    p.add_argument("--kernel-size", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--overlap-attention", action="store_true")
    p.add_argument("--gram", action="store_true")
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--criterion")
    p.add_argument("--seed", type=int)
    p.add_argument("--min-df", type=int)
    p.add_argument("--aux-weight", type=float, help="lambda; enables the auxiliary task")
    p.add_argument("--aux-head", choices=["linear", "mlp"])
    p.add_argument("--share-point", choices=["pre_convolution", "post_convolution"])


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="conceptaug", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic corpus bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", help="JSON file of generator settings; flags override")
    p.add_argument("--seed", type=int)
    p.add_argument("--variants", help="phrases per concept: N, or a distribution like 1:0.5,3:0.25,5:0.25")
    p.add_argument("--coverage", type=float)
    p.add_argument("--mismatch", type=float, help="fraction of phrases mapped to the parent code")
    p.add_argument("--label-mode", choices=["noisy_or", "codes"])
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--concepts", type=int)
    p.add_argument("--label-count", type=int)
    p.add_argument("--doc-length", type=float)
    p.add_argument("--docs", type=int, nargs=3, metavar=("TRAIN", "DEV", "TEST"))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("annotate", help="run the dictionary annotator (or import external annotations)")
    p.add_argument("--documents", required=True)
    p.add_argument("--dictionary")
    p.add_argument("--ontology")
    p.add_argument("--external", help="JSONL of character-offset annotations to import instead")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("train", help="train a model")
    _data_args(p)
    _model_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint (or the raw-codes baseline)")
    _data_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--train-config", help="config.json written by train; its vocabulary hash must match")
    p.add_argument("--part", choices=["train", "dev", "test"], default="test")
    p.add_argument("--raw-codes", action="store_true", help="score annotator codes directly")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-lambda", help="train once per auxiliary weight, write a CSV")
    _data_args(p)
    _model_args(p)
    p.add_argument("--grid", type=float, nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_lambda)

    p = sub.add_parser("plot", help="bucketed-F1 bar chart and phrases-per-concept histogram")
    p.add_argument("--metrics", nargs="+", help="metrics.json files, optionally NAME=path")
    p.add_argument("--stats", help="stats.json from simulate/annotate")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "evaluate" and not args.raw_codes and not args.checkpoint:
            raise CLIError("usage", "evaluate needs --checkpoint (or --raw-codes)", 2)
        args.func(args)
        return 0
    except CLIError as e:
        err, status = f"{e.kind}: {e}", e.status
    except (ValueError, KeyError, OSError, RuntimeError) as e:
        err, status = f"{type(e).__name__}: {e}", 1
    print(f"conceptaug: error: {' '.join(err.split())}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
