"""Command-line surface for the full pipeline.

Subcommands: gen-synthetic, stats, finetune-encoder, extract-features,
train-doc, evaluate, report, multi-seed. Every command writes its outputs
under ``--out`` together with a manifest recording the configuration hash,
content hashes of the inputs, and the produced files, so a run can be
reproduced from the manifest alone.

Exit codes: 1 invalid configuration (the message names the field), 2 a
missing input file, 3 training aborted on a non-finite loss.

The ``HIERDOC_THREADS`` environment variable caps numerical worker threads;
it is applied before numpy loads, at process start.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path


def _apply_thread_cap() -> None:
    cap = os.environ.get("HIERDOC_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


_apply_thread_cap()


EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_MISSING = 2
EXIT_ABORTED = 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write_manifest(out_dir: Path, command: str, config: dict, inputs: list[Path], outputs: list[Path]) -> None:
    from .store import file_sha256

    manifest = {
        "command": command,
        "config": config,
        "config_hash": _sha256_bytes(json.dumps(config, sort_keys=True).encode()),
        "inputs": {str(p): file_sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")


def _require_file(path: str | Path) -> Path:
    path = Path(path)
    if not path.exists():
        raise CliError(f"missing input file: {path}", EXIT_MISSING)
    return path


def _load_config(args) -> "ExperimentConfig":
    from .experiment import ConfigError, ExperimentConfig

    try:
        if getattr(args, "config", None):
            cfg = ExperimentConfig.from_json(_require_file(args.config))
        else:
            cfg = ExperimentConfig()
        # flags override file fields
        for flag in ("data", "out", "seeds"):
            value = getattr(args, flag, None)
            if value is not None:
                if flag == "data":
                    cfg.data_path = value
                elif flag == "out":
                    cfg.out_dir = value
                else:
                    cfg.seeds = value
        cfg.validate()
        return cfg
    except ConfigError as exc:
        raise CliError(f"invalid configuration: {exc}", EXIT_CONFIG) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"invalid configuration: config file is not valid JSON ({exc})", EXIT_CONFIG) from exc


def cmd_gen_synthetic(args) -> int:
    from .synthetic import TaskSpec, generate_dataset, write_jsonl

    try:
        spec = TaskSpec(
            kind=args.kind,
            num_train=args.num_train,
            num_valid=args.num_valid,
            num_test=args.num_test,
            doc_length=args.doc_length,
            filler_vocab=args.filler_vocab,
            num_classes=args.num_classes,
            segment_size=args.segment_size,
            stride=args.stride,
            marker_every=args.marker_every,
            marker_width=args.marker_width,
            seed=args.seed,
        )
        rows = generate_dataset(spec)
    except ValueError as exc:
        raise CliError(f"invalid configuration: {exc}", EXIT_CONFIG) from exc
    out = Path(args.out)
    write_jsonl(rows, out)
    _write_manifest(out.parent, "gen-synthetic", spec.to_dict(), [], [out])
    print(f"wrote {len(rows)} documents to {out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    from .text import export_stats, load_dataset

    data = _require_file(args.data)
    docs, _, stats, label_map = load_dataset(data)
    out_dir = Path(args.out)
    stats_path, cdf_path = export_stats(stats, out_dir)
    _write_manifest(out_dir, "stats", {"data": str(data)}, [data], [stats_path, cdf_path])
    print(
        f"C={stats.num_classes} N={stats.num_documents} "
        f"AW={stats.average_words:.1f} L={stats.longest}"
    )
    return EXIT_OK


def cmd_finetune_encoder(args) -> int:
    import numpy as np

    from .experiment import encoder_config_for, load_experiment_data
    from .encoder import fine_tune_segments
    from .store import save_checkpoint
    from .training import OptimizerSettings, write_curves_csv

    cfg = _load_config(args)
    _require_file(cfg.data_path)
    data = load_experiment_data(cfg)
    enc_config = encoder_config_for(cfg, data)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    result = fine_tune_segments(
        data.splits["train"],
        data.splits["valid"],
        enc_config,
        OptimizerSettings(**cfg.finetune_optimizer),
        epochs=cfg.finetune_epochs,
        segment_size=cfg.segment_size,
        stride=cfg.stride,
        batch_size=cfg.finetune_batch,
        seed=seed,
        max_segments=cfg.max_segments,
    )
    out_dir = Path(cfg.out_dir)
    ckpt_path = out_dir / "encoder.ckpt"
    save_checkpoint(
        ckpt_path,
        "encoder",
        result.params,
        enc_config.to_dict(),
        data.label_map,
        metadata={
            "vocab": data.vocab.to_list(),
            "segment_size": cfg.segment_size,
            "stride": cfg.stride,
            "max_segments": cfg.max_segments,
            "seed": seed,
            "best_epoch": result.best_epoch,
            "aborted": result.aborted,
        },
    )
    metrics_path = out_dir / "finetune_metrics.json"
    metrics_path.write_text(json.dumps(result.metrics, indent=2), encoding="utf-8")
    write_curves_csv(result.metrics, out_dir / "finetune_curves.csv")
    _write_manifest(
        out_dir,
        "finetune-encoder",
        cfg.to_dict(),
        [Path(cfg.data_path)],
        [ckpt_path, metrics_path, out_dir / "finetune_curves.csv"],
    )
    if result.aborted:
        print("training aborted on non-finite loss; last finite checkpoint kept")
        return EXIT_ABORTED
    best = max((m["valid_acc"] for m in result.metrics if m["valid_acc"] is not None), default=0.0)
    print(f"encoder checkpoint {ckpt_path} (best segment valid acc {best:.3f})")
    return EXIT_OK


def cmd_extract_features(args) -> int:
    from .experiment import extract_features
    from .encoder import EncoderConfig
    from .store import load_checkpoint, write_feature_store
    from .text import Vocabulary, load_dataset, split_documents

    ckpt_path = _require_file(args.checkpoint)
    data_path = _require_file(args.data)
    ckpt = load_checkpoint(ckpt_path)
    if ckpt.kind != "encoder":
        raise CliError(f"invalid configuration: {ckpt_path} is not an encoder checkpoint", EXIT_CONFIG)
    vocab = Vocabulary.from_list(ckpt.metadata["vocab"])
    docs, _, _, label_map = load_dataset(data_path, vocab=vocab)
    if label_map != ckpt.label_map:
        raise CliError(
            "invalid configuration: dataset label map does not match the checkpoint's", EXIT_CONFIG
        )
    config = EncoderConfig.from_dict(ckpt.config)
    params = ckpt.tensors()
    out_dir = Path(args.out)
    outputs = []
    for split, split_docs in split_documents(docs).items():
        if not split_docs:
            continue
        seqs = extract_features(
            params,
            config,
            split_docs,
            args.repr,
            ckpt.metadata["segment_size"],
            ckpt.metadata["stride"],
            ckpt.metadata.get("max_segments"),
            source_hash=ckpt.content_hash,
        )
        path = out_dir / f"{split}.feats"
        write_feature_store(path, seqs, args.repr, ckpt.content_hash)
        outputs.append(path)
        print(f"{split}: {len(seqs)} documents -> {path}")
    _write_manifest(
        out_dir,
        "extract-features",
        {"repr": args.repr, "checkpoint": str(ckpt_path)},
        [ckpt_path, data_path],
        outputs,
    )
    return EXIT_OK


def _read_split(features_dir: Path, split: str, strict_source: str | None = None):
    from .store import read_feature_store

    path = features_dir / f"{split}.feats"
    if not path.exists():
        return None
    seqs, header = read_feature_store(path, expected_source=strict_source, strict=strict_source is not None)
    return seqs, header


def cmd_train_doc(args) -> int:
    from .docmodel import predict_documents, train_document_model
    from .experiment import docmodel_config_for
    from .store import save_checkpoint
    from .training import (
        OptimizerSettings,
        PlateauSchedule,
        evaluate_accuracy,
        write_curves_csv,
    )

    cfg = _load_config(args)
    if args.kind:
        cfg.docmodel["kind"] = args.kind
    features_dir = Path(args.features)
    train_loaded = _read_split(features_dir, "train")
    valid_loaded = _read_split(features_dir, "valid")
    if train_loaded is None:
        raise CliError(f"missing input file: {features_dir / 'train.feats'}", EXIT_MISSING)
    train_seqs, header = train_loaded
    valid_seqs = valid_loaded[0] if valid_loaded else []
    labels = sorted({s.label for s in train_seqs})

    class _Data:  # minimal stand-in carrying the class count
        label_map = {str(c): c for c in labels}
        num_classes = len(labels)

    doc_config = docmodel_config_for(cfg, _Data, train_seqs[0].width)
    settings = OptimizerSettings(**cfg.doc_optimizer)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    plateau = PlateauSchedule(lr=settings.lr) if cfg.use_plateau else None
    result = train_document_model(
        train_seqs,
        valid_seqs,
        doc_config,
        settings,
        epochs=cfg.doc_epochs,
        batch_size=cfg.doc_batch,
        seed=seed,
        plateau=plateau,
        early_stop_patience=cfg.early_stop_patience,
    )
    out_dir = Path(args.out or cfg.out_dir)
    ckpt_path = out_dir / f"{doc_config.kind}.ckpt"
    save_checkpoint(
        ckpt_path,
        "docmodel",
        result.params,
        doc_config.to_dict(),
        _Data.label_map,
        metadata={
            "feature_source": header["source_checkpoint"],
            "repr": header["repr"],
            "seed": seed,
            "best_epoch": result.best_epoch,
            "best_valid_accuracy": result.best_valid_accuracy,
            "aborted": result.aborted,
        },
    )
    metrics_path = out_dir / "doc_metrics.json"
    metrics_path.write_text(json.dumps(result.metrics, indent=2), encoding="utf-8")
    write_curves_csv(result.metrics, out_dir / "doc_curves.csv")
    outputs = [ckpt_path, metrics_path, out_dir / "doc_curves.csv"]
    test_loaded = _read_split(features_dir, "test")
    if test_loaded:
        preds = predict_documents(result.params, doc_config, test_loaded[0], cfg.doc_batch)
        acc = evaluate_accuracy(preds, [s.label for s in test_loaded[0]])
        print(f"test accuracy {acc:.4f}")
    _write_manifest(
        out_dir,
        "train-doc",
        cfg.to_dict(),
        [p for p in features_dir.glob("*.feats")],
        outputs,
    )
    if result.aborted:
        print("training aborted on non-finite loss; last finite checkpoint kept")
        return EXIT_ABORTED
    print(f"document model checkpoint {ckpt_path} (best valid acc {result.best_valid_accuracy:.3f})")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    import csv

    from .docmodel import DocModelConfig, predict_documents
    from .store import load_checkpoint
    from .training import bucketed_accuracy, evaluate_accuracy

    ckpt_path = _require_file(args.checkpoint)
    ckpt = load_checkpoint(ckpt_path)
    if ckpt.kind != "docmodel":
        raise CliError(f"invalid configuration: {ckpt_path} is not a document-model checkpoint", EXIT_CONFIG)
    features_dir = Path(args.features)
    loaded = _read_split(features_dir, args.split, strict_source=ckpt.metadata.get("feature_source") if args.strict else None)
    if loaded is None:
        raise CliError(f"missing input file: {features_dir / (args.split + '.feats')}", EXIT_MISSING)
    seqs, _ = loaded
    config = DocModelConfig.from_dict(ckpt.config)
    preds = predict_documents(ckpt.tensors(), config, seqs)
    labels = [s.label for s in seqs]
    acc = evaluate_accuracy(preds, labels)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    summary = {"split": args.split, "accuracy": acc, "documents": len(seqs)}
    if args.buckets:
        edges = [int(v) for v in args.buckets.split(",")]
        lengths = [s.doc_length for s in seqs]
        rows = bucketed_accuracy(preds, labels, lengths, edges)
        bucket_path = out_dir / "bucket_accuracy.csv"
        with bucket_path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["low", "high", "count", "accuracy"])
            for row in rows:
                writer.writerow([row.low, row.high, row.count, "" if row.accuracy is None else row.accuracy])
        outputs.append(bucket_path)
        summary["buckets"] = [
            {"low": r.low, "high": r.high, "count": r.count, "accuracy": r.accuracy} for r in rows
        ]
    eval_path = out_dir / "evaluation.json"
    eval_path.write_text(json.dumps(summary, indent=2), encoding="utf-8")
    outputs.append(eval_path)
    _write_manifest(out_dir, "evaluate", {"checkpoint": str(ckpt_path)}, [ckpt_path], outputs)
    print(f"{args.split} accuracy {acc:.4f} over {len(seqs)} documents")
    return EXIT_OK


def cmd_report(args) -> int:
    from .training import write_curves_csv

    run_dir = Path(args.run)
    out_dir = Path(args.out or run_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    summary: dict = {}
    report_path = run_dir / "run_report.json"
    if report_path.exists():
        report = json.loads(report_path.read_text(encoding="utf-8"))
        summary["mean_accuracy"] = report["mean_accuracy"]
        summary["per_seed"] = {str(r["seed"]): r["test_accuracy"] for r in report["per_seed"]}
        for entry in report["per_seed"]:
            path = out_dir / f"curves_seed{entry['seed']}.csv"
            write_curves_csv(entry["curves"], path)
            outputs.append(path)
    for name in ("doc_metrics.json", "finetune_metrics.json"):
        metrics_path = run_dir / name
        if metrics_path.exists():
            curves = json.loads(metrics_path.read_text(encoding="utf-8"))
            path = out_dir / name.replace("_metrics.json", "_curves.csv")
            write_curves_csv(curves, path)
            outputs.append(path)
    if not outputs:
        raise CliError(f"missing input file: no metrics or report found in {run_dir}", EXIT_MISSING)
    summary_path = out_dir / "report.json"
    summary_path.write_text(json.dumps(summary, indent=2), encoding="utf-8")
    outputs.append(summary_path)
    _write_manifest(out_dir, "report", {"run": str(run_dir)}, [], outputs)
    print(f"report written to {summary_path}")
    return EXIT_OK


def cmd_multi_seed(args) -> int:
    from .experiment import load_experiment_data, run_seed
    from .training import multi_seed_run

    cfg = _load_config(args)
    _require_file(cfg.data_path)
    data = load_experiment_data(cfg)
    report = multi_seed_run(lambda seed: run_seed(cfg, data, seed), cfg.seeds, cfg.to_dict())
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "run_report.json"
    report.write(report_path)
    _write_manifest(out_dir, "multi-seed", cfg.to_dict(), [Path(cfg.data_path)], [report_path])
    if report.incomplete:
        print(f"multi-seed run incomplete: {report.error}")
        return EXIT_ABORTED
    accs = ", ".join(f"{r.seed}:{r.test_accuracy:.3f}" for r in report.per_seed)
    print(f"per-seed [{accs}] mean {report.mean_accuracy:.4f}")
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hierdoc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="generate a controlled JSONL corpus")
    g.add_argument("--kind", required=True,
                   choices=["distributed_evidence", "order_sensitive", "separable", "null"])
    g.add_argument("--out", required=True)
    g.add_argument("--num-train", type=int, default=200)
    g.add_argument("--num-valid", type=int, default=50)
    g.add_argument("--num-test", type=int, default=50)
    g.add_argument("--doc-length", type=int, default=1000)
    g.add_argument("--filler-vocab", type=int, default=1000)
    g.add_argument("--num-classes", type=int, default=2)
    g.add_argument("--segment-size", type=int, default=200)
    g.add_argument("--stride", type=int, default=50)
    g.add_argument("--marker-every", type=int, default=50)
    g.add_argument("--marker-width", type=int, default=16)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_synthetic)

    s = sub.add_parser("stats", help="corpus statistics and length distribution")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stats)

    f = sub.add_parser("finetune-encoder", help="train the segment encoder on labeled segments")
    f.add_argument("--config")
    f.add_argument("--data")
    f.add_argument("--out")
    f.add_argument("--seed", type=int)
    f.set_defaults(func=cmd_finetune_encoder)

    e = sub.add_parser("extract-features", help="frozen-encoder H or P features per split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--repr", choices=["H", "P"], default="H")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_extract_features)

    t = sub.add_parser("train-doc", help="train a document model on stored features")
    t.add_argument("--features", required=True)
    t.add_argument("--kind", choices=["robert", "tobert"])
    t.add_argument("--config")
    t.add_argument("--out")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train_doc)

    v = sub.add_parser("evaluate", help="score a document model on a feature split")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--features", required=True)
    v.add_argument("--split", default="test")
    v.add_argument("--buckets", help="comma-separated length edges for per-bucket accuracy")
    v.add_argument("--strict", action="store_true", help="require features from this model's source checkpoint")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="summarize a run directory into CSV/JSON")
    r.add_argument("--run", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)

    m = sub.add_parser("multi-seed", help="full train/select/test cycle per seed")
    m.add_argument("--config", required=True)
    m.add_argument("--data")
    m.add_argument("--out")
    m.add_argument("--seeds", type=_int_list)
    m.set_defaults(func=cmd_multi_seed)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: missing input file: {exc}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
