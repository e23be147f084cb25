"""End-to-end experiment wiring: data, encoder, features, document model.

An experiment owns one dataset, one segment-encoder configuration, and one
document-model configuration. Each seeded run fine-tunes the encoder on
training segments (or keeps the random initialization), extracts H or P
features for every split, trains the document model on frozen features,
and scores the test split; voting baselines are computed from segment
posteriors alongside.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .docmodel import (
    DocModelConfig,
    SegmentSequence,
    aggregate_average,
    aggregate_most_frequent,
    predict_documents,
    train_document_model,
)
from .encoder import (
    EncoderConfig,
    FineTuneResult,
    classify_segments,
    fine_tune_segments,
    init_encoder_params,
    pooled_output,
    encoder_hidden,
)
from .segment import segment_document
from .text import Document, Vocabulary, load_dataset, split_documents
from .training import (
    OptimizerSettings,
    PlateauSchedule,
    SeedResult,
    evaluate_accuracy,
)


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


@dataclass
class ExperimentConfig:
    data_path: str = ""
    out_dir: str = "runs/exp"
    segment_size: int = 200
    stride: int = 50
    max_segments: int = 64
    max_vocab: int = 53160
    repr_kind: str = "H"  # feature fed to the document model
    use_finetuned_encoder: bool = True
    encoder: dict = field(default_factory=dict)  # EncoderConfig overrides
    finetune_epochs: int = 3
    finetune_batch: int = 64
    finetune_optimizer: dict = field(default_factory=lambda: {"kind": "adam", "lr": 1e-3})
    docmodel: dict = field(default_factory=lambda: {"kind": "robert"})
    doc_optimizer: dict = field(default_factory=lambda: {"kind": "adam", "lr": 1e-3})
    doc_epochs: int = 30
    doc_batch: int = 32
    early_stop_patience: int = 10
    use_plateau: bool = True
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])

    def validate(self) -> None:
        if not self.data_path:
            raise ConfigError("data_path: required")
        if self.stride < 1 or self.stride > self.segment_size:
            raise ConfigError("stride: must satisfy 1 <= stride <= segment_size")
        if self.repr_kind not in ("H", "P"):
            raise ConfigError("repr_kind: must be 'H' or 'P'")
        if self.max_segments < 1:
            raise ConfigError("max_segments: must be positive")
        max_positions = self.encoder.get("max_positions", self.segment_size + 2)
        if max_positions < self.segment_size + 2:
            raise ConfigError(
                f"encoder.max_positions: {max_positions} < segment_size + 2 = {self.segment_size + 2}"
            )
        if self.doc_epochs < 0 or self.finetune_epochs < 0:
            raise ConfigError("doc_epochs/finetune_epochs: must be non-negative")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds: must be distinct")
        try:
            OptimizerSettings(**self.finetune_optimizer)
            OptimizerSettings(**self.doc_optimizer)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"optimizer settings: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"{sorted(unknown)[0]}: unknown configuration field")
        return cls(**data)

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class ExperimentData:
    splits: dict[str, list[Document]]
    vocab: Vocabulary
    label_map: dict[str, int]

    @property
    def num_classes(self) -> int:
        return len(self.label_map)


def load_experiment_data(cfg: ExperimentConfig) -> ExperimentData:
    docs, vocab, _, label_map = load_dataset(cfg.data_path, max_vocab=cfg.max_vocab)
    return ExperimentData(splits=split_documents(docs), vocab=vocab, label_map=label_map)


def encoder_config_for(cfg: ExperimentConfig, data: ExperimentData) -> EncoderConfig:
    fields = dict(cfg.encoder)
    fields.setdefault("max_positions", cfg.segment_size + 2)
    fields["vocab_size"] = data.vocab.size
    fields["num_classes"] = data.num_classes
    return EncoderConfig(**fields)


def docmodel_config_for(cfg: ExperimentConfig, data: ExperimentData, width: int) -> DocModelConfig:
    fields = dict(cfg.docmodel)
    fields["input_dim"] = width
    fields["num_classes"] = data.num_classes
    fields.setdefault("max_segments", cfg.max_segments)
    return DocModelConfig(**fields)


def extract_features(
    params: dict[str, Tensor],
    config: EncoderConfig,
    docs: Sequence[Document],
    repr_kind: str,
    segment_size: int,
    stride: int,
    max_segments: int | None = None,
    source_hash: str = "untrained",
    batch_segments: int = 512,
) -> list[SegmentSequence]:
    """Frozen-encoder H or P features for every document, in order.

    Documents' windows are concatenated and encoded in flat batches of
    ``batch_segments`` rows, then split back per document.
    """
    batches = [segment_document(d, segment_size, stride, max_segments) for d in docs]
    if not batches:
        return []
    all_ids = np.concatenate([b.token_ids for b in batches])
    all_mask = np.concatenate([b.mask for b in batches])
    chunks = []
    with ag.no_grad():
        for lo in range(0, len(all_ids), batch_segments):
            hidden = encoder_hidden(
                params, config, all_ids[lo : lo + batch_segments], all_mask[lo : lo + batch_segments]
            )
            chunks.append(pooled_output(params, hidden).data)
    pooled = np.concatenate(chunks).astype(np.float32)
    if repr_kind == "P":
        features = classify_segments(params, pooled).astype(np.float32)
    else:
        features = pooled
    out = []
    offset = 0
    for doc, batch in zip(docs, batches):
        n = batch.num_segments
        out.append(
            SegmentSequence(
                doc_id=doc.id,
                features=features[offset : offset + n],
                label=doc.label,
                source_kind=repr_kind,
                source_hash=source_hash,
                doc_length=doc.length,
            )
        )
        offset += n
    return out


def prepare_encoder(
    cfg: ExperimentConfig, data: ExperimentData, seed: int
) -> tuple[dict[str, Tensor], EncoderConfig, FineTuneResult | None]:
    """Fine-tuned or randomly initialized encoder parameters for one seed."""
    enc_config = encoder_config_for(cfg, data)
    if not cfg.use_finetuned_encoder or cfg.finetune_epochs == 0:
        params = init_encoder_params(enc_config, np.random.default_rng(seed))
        return params, enc_config, None
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
    return result.params, enc_config, result


def voting_baselines(
    posterior_seqs: Sequence[SegmentSequence],
) -> dict[str, float]:
    """Average and most-frequent voting accuracy over P sequences."""
    labels = [s.label for s in posterior_seqs]
    avg = [aggregate_average(s.features) for s in posterior_seqs]
    frq = [aggregate_most_frequent(s.features) for s in posterior_seqs]
    return {
        "average_vote": evaluate_accuracy(avg, labels),
        "most_frequent_vote": evaluate_accuracy(frq, labels),
    }


def run_seed(cfg: ExperimentConfig, data: ExperimentData, seed: int) -> SeedResult:
    """One full train/select/test cycle; deterministic given the seed."""
    params, enc_config, finetune = prepare_encoder(cfg, data, seed)

    def features_for(split: str, kind: str) -> list[SegmentSequence]:
        return extract_features(
            params,
            enc_config,
            data.splits[split],
            kind,
            cfg.segment_size,
            cfg.stride,
            cfg.max_segments,
            source_hash="seed-local",
        )

    train_seqs = features_for("train", cfg.repr_kind)
    valid_seqs = features_for("valid", cfg.repr_kind)
    test_seqs = features_for("test", cfg.repr_kind)

    width = train_seqs[0].width
    doc_config = docmodel_config_for(cfg, data, width)
    settings = OptimizerSettings(**cfg.doc_optimizer)
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
    preds = predict_documents(result.params, doc_config, test_seqs, batch_size=cfg.doc_batch)
    test_acc = evaluate_accuracy(preds, [s.label for s in test_seqs])

    extras: dict = {"best_epoch": result.best_epoch, "best_valid_accuracy": result.best_valid_accuracy}
    if finetune is not None:
        extras["finetune_best_epoch"] = finetune.best_epoch
        extras["finetune_valid_acc"] = max(
            (m["valid_acc"] for m in finetune.metrics if m["valid_acc"] is not None), default=0.0
        )
    test_posteriors = features_for("test", "P")
    extras.update(voting_baselines(test_posteriors))
    return SeedResult(seed=seed, test_accuracy=test_acc, curves=result.metrics, extras=extras)
