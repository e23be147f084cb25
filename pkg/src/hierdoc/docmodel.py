"""Document-level aggregators over per-segment representations.

Two trained models consume the ordered sequence of segment vectors (H or P)
of a document:

* the recurrent model: a 100-unit LSTM whose final hidden state acts as the
  document embedding, followed by a 30-unit ReLU layer and a softmax;
* the segment-level transformer: the features are projected to the model
  width, optionally summed with learned segment-position embeddings, run
  through 2 transformer layers, pooled over segments, and classified by the
  same ReLU + softmax head.

Two untrained voting baselines turn per-segment posteriors into a document
decision: the argmax of the averaged posterior, and the modal per-segment
prediction. Ties always resolve toward the lowest class index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .encoder import cross_entropy, init_transformer_layer, transformer_layer, truncated_normal
from .training import (
    AdamState,
    OptimizerSettings,
    PlateauSchedule,
    adam_step,
    plateau_update,
    warmup_scale,
)

ROBERT = "robert"
TOBERT = "tobert"


@dataclass
class DocModelConfig:
    kind: str = ROBERT
    input_dim: int = 128
    num_classes: int = 2
    lstm_dim: int = 100
    head_hidden: int = 30
    tobert_layers: int = 2
    tobert_heads: int = 4
    tobert_dim: int = 128
    tobert_ff: int = 512
    use_position_embeddings: bool = True
    pool: str = "mean"  # or "first"
    max_segments: int = 64
    dropout: float = 0.1

    def __post_init__(self):
        if self.kind not in (ROBERT, TOBERT):
            raise ValueError(f"unknown document model kind '{self.kind}'")
        if self.pool not in ("mean", "first"):
            raise ValueError(f"unknown pooling '{self.pool}'")
        if min(self.input_dim, self.num_classes, self.lstm_dim, self.head_hidden) < 1:
            raise ValueError("dimensions must be positive")
        if self.kind == TOBERT and self.tobert_dim % self.tobert_heads != 0:
            raise ValueError("tobert_dim must be divisible by tobert_heads")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DocModelConfig":
        return cls(**data)


@dataclass
class SegmentSequence:
    """Ordered per-segment feature rows of one document."""

    doc_id: str
    features: np.ndarray  # (num_segments, width) float32
    label: int | None = None
    source_kind: str = "H"  # "H" (pooled) or "P" (posterior) features
    source_hash: str = "untrained"
    doc_length: int = 0  # tokens in the source document, for length analyses

    @property
    def num_segments(self) -> int:
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1]


def init_docmodel_params(
    config: DocModelConfig, rng: np.random.Generator, dtype=np.float32
) -> dict[str, Tensor]:
    def w(shape):
        return Tensor(truncated_normal(rng, shape, dtype=dtype), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    params: dict[str, Tensor] = {}
    if config.kind == ROBERT:
        u = config.lstm_dim
        gate_std = 1.0 / math.sqrt(config.input_dim + u)
        bias = np.zeros(4 * u, dtype=dtype)
        bias[u : 2 * u] = 1.0  # forget gate opens at initialization
        params["lstm_wx"] = Tensor(
            rng.normal(0.0, gate_std, size=(config.input_dim, 4 * u)).astype(dtype),
            requires_grad=True,
        )
        params["lstm_wh"] = Tensor(
            rng.normal(0.0, gate_std, size=(u, 4 * u)).astype(dtype), requires_grad=True
        )
        params["lstm_b"] = Tensor(bias, requires_grad=True)
        head_in = u
    else:
        dm = config.tobert_dim
        params["in_w"] = w((config.input_dim, dm))
        params["in_b"] = zeros(dm)
        params["pos_emb"] = w((config.max_segments, dm))
        for i in range(config.tobert_layers):
            params.update(init_transformer_layer(rng, f"t{i}", dm, config.tobert_ff, dtype=dtype))
        head_in = dm
    params["head_w1"] = w((head_in, config.head_hidden))
    params["head_b1"] = zeros(config.head_hidden)
    params["head_w2"] = w((config.head_hidden, config.num_classes))
    params["head_b2"] = zeros(config.num_classes)
    return params


def _head(params: dict[str, Tensor], x: Tensor) -> Tensor:
    hidden = ag.relu(x @ params["head_w1"] + params["head_b1"])
    return hidden @ params["head_w2"] + params["head_b2"]


def robert_batch_logits(
    params: dict[str, Tensor],
    config: DocModelConfig,
    features: np.ndarray,
    lengths: np.ndarray,
) -> Tensor:
    """Class logits (B, C) for padded feature batches (B, T, d_in).

    The recurrent state advances only while a sequence still has segments;
    the document embedding is the hidden state after its last real segment.
    """
    b, t, d = features.shape
    if d != config.input_dim:
        raise ValueError(f"feature width {d} does not match configured input_dim {config.input_dim}")
    u = config.lstm_dim
    x = ag.constant(features)
    dtype = features.dtype
    h = ag.constant(np.zeros((b, u), dtype=dtype))
    c = ag.constant(np.zeros((b, u), dtype=dtype))
    for step in range(t):
        z = x[:, step, :] @ params["lstm_wx"] + h @ params["lstm_wh"] + params["lstm_b"]
        i = ag.sigmoid(z[:, 0 * u : 1 * u])
        f = ag.sigmoid(z[:, 1 * u : 2 * u])
        g = ag.tanh(z[:, 2 * u : 3 * u])
        o = ag.sigmoid(z[:, 3 * u : 4 * u])
        c_new = f * c + i * g
        h_new = o * ag.tanh(c_new)
        alive = ag.constant((lengths > step).astype(dtype)[:, None])
        h = alive * h_new + (1.0 - alive) * h
        c = alive * c_new + (1.0 - alive) * c
    return _head(params, h)


def tobert_batch_logits(
    params: dict[str, Tensor],
    config: DocModelConfig,
    features: np.ndarray,
    lengths: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Class logits (B, C) from the segment-level transformer."""
    b, t, d = features.shape
    if d != config.input_dim:
        raise ValueError(f"feature width {d} does not match configured input_dim {config.input_dim}")
    if config.use_position_embeddings and t > config.max_segments:
        raise ValueError(
            f"{t} segments exceed the positional table of {config.max_segments}; "
            "either truncate the document or raise max_segments"
        )
    drop_rng = rng if training else None
    x = ag.constant(features) @ params["in_w"] + params["in_b"]
    if config.use_position_embeddings:
        x = x + ag.embedding(params["pos_emb"], np.arange(t, dtype=np.int64))
    mask = (np.arange(t)[None, :] < lengths[:, None]).astype(features.dtype)
    for i in range(config.tobert_layers):
        x = transformer_layer(
            x, params, f"t{i}", config.tobert_heads, mask, dropout=config.dropout, rng=drop_rng
        )
    if config.pool == "mean":
        weights = mask / mask.sum(axis=1, keepdims=True)
        pooled = (x * ag.constant(weights[:, :, None])).sum(axis=1)
    else:
        pooled = x[:, 0, :]
    return _head(params, pooled)


def _single_posterior(params, config, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ValueError("a segment sequence must be a non-empty (segments, width) matrix")
    lengths = np.array([features.shape[0]])
    with ag.no_grad():
        if config.kind == ROBERT:
            logits = robert_batch_logits(params, config, features[None], lengths)
        else:
            logits = tobert_batch_logits(params, config, features[None], lengths)
        return ag.softmax(logits, axis=-1).data[0]


def robert_forward(
    features: np.ndarray, params: dict[str, Tensor], config: DocModelConfig
) -> np.ndarray:
    """Posterior over classes for one document's feature sequence."""
    if config.kind != ROBERT:
        raise ValueError("robert_forward requires a recurrent-model config")
    return _single_posterior(params, config, features)


def tobert_forward(
    features: np.ndarray, params: dict[str, Tensor], config: DocModelConfig
) -> np.ndarray:
    """Posterior over classes for one document's feature sequence."""
    if config.kind != TOBERT:
        raise ValueError("tobert_forward requires a transformer-model config")
    return _single_posterior(params, config, features)


# -- voting baselines --------------------------------------------------------


def _validated_posteriors(posteriors: np.ndarray) -> np.ndarray:
    arr = np.asarray(posteriors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("posteriors must be a non-empty (segments, classes) matrix")
    if not np.allclose(arr.sum(axis=1), 1.0, atol=1e-3):
        raise ValueError("posterior rows must lie on the probability simplex")
    return arr


def aggregate_average(posteriors: np.ndarray) -> int:
    """Most probable class of the averaged segment posteriors."""
    arr = _validated_posteriors(posteriors)
    return int(arr.mean(axis=0).argmax())


def aggregate_most_frequent(posteriors: np.ndarray) -> int:
    """Modal per-segment prediction; argmax and mode break ties low."""
    arr = _validated_posteriors(posteriors)
    votes = arr.argmax(axis=1)
    return int(np.bincount(votes, minlength=arr.shape[1]).argmax())


# -- training ----------------------------------------------------------------


@dataclass
class DocTrainResult:
    params: dict[str, Tensor]
    metrics: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_accuracy: float = 0.0
    aborted: bool = False


def _batch_iter(seqs: Sequence[SegmentSequence], order: np.ndarray, batch_size: int):
    """Batches of padded features; documents pre-bucketed by segment count."""
    for lo in range(0, len(order), batch_size):
        sel = order[lo : lo + batch_size]
        group = [seqs[i] for i in sel]
        t = max(s.num_segments for s in group)
        feats = np.zeros((len(group), t, group[0].width), dtype=np.float32)
        lengths = np.zeros(len(group), dtype=np.int64)
        labels = np.zeros(len(group), dtype=np.int64)
        for row, seq in enumerate(group):
            feats[row, : seq.num_segments] = seq.features
            lengths[row] = seq.num_segments
            labels[row] = seq.label
        yield feats, lengths, labels


def _batch_logits(params, config, feats, lengths, training=False, rng=None) -> Tensor:
    if config.kind == ROBERT:
        return robert_batch_logits(params, config, feats, lengths)
    return tobert_batch_logits(params, config, feats, lengths, training=training, rng=rng)


def predict_documents(
    params: dict[str, Tensor],
    config: DocModelConfig,
    seqs: Sequence[SegmentSequence],
    batch_size: int = 32,
) -> np.ndarray:
    """Predicted class per document, in input order."""
    preds = np.zeros(len(seqs), dtype=np.int64)
    order = np.arange(len(seqs))
    with ag.no_grad():
        pos = 0
        for feats, lengths, _ in _batch_iter(seqs, order, batch_size):
            logits = _batch_logits(params, config, feats, lengths)
            preds[pos : pos + len(lengths)] = logits.data.argmax(axis=-1)
            pos += len(lengths)
    return preds


def _valid_metrics(params, config, seqs, batch_size) -> tuple[float, float]:
    """(cross-entropy, accuracy) over a held-out split."""
    if not seqs:
        return math.nan, 0.0
    total_nll = 0.0
    hits = 0
    order = np.arange(len(seqs))
    with ag.no_grad():
        for feats, lengths, labels in _batch_iter(seqs, order, batch_size):
            logits = _batch_logits(params, config, feats, lengths)
            total_nll += cross_entropy(logits, labels).item() * len(labels)
            hits += int(np.sum(logits.data.argmax(axis=-1) == labels))
    return total_nll / len(seqs), hits / len(seqs)


def train_document_model(
    train_seqs: Sequence[SegmentSequence],
    valid_seqs: Sequence[SegmentSequence],
    config: DocModelConfig,
    settings: OptimizerSettings,
    epochs: int = 50,
    batch_size: int = 32,
    seed: int = 0,
    plateau: PlateauSchedule | None = None,
    early_stop_patience: int = 10,
) -> DocTrainResult:
    """Minimize document-level cross-entropy with frozen input features.

    Documents are bucketed by segment count to limit padding; batch order is
    reshuffled each epoch from the run seed. Returns the parameters with the
    best validation accuracy (later epochs win ties) plus per-epoch curves.
    Training stops early after ``early_stop_patience`` epochs without a new
    best validation accuracy; a non-finite loss aborts with the last finite
    checkpoint.
    """
    if not train_seqs:
        raise ValueError("training requires a non-empty sequence set")
    widths = {s.width for s in list(train_seqs) + list(valid_seqs)}
    if len(widths) != 1:
        raise ValueError(f"sequences disagree on feature width: {sorted(widths)}")
    if widths != {config.input_dim}:
        raise ValueError(f"feature width {widths.pop()} does not match input_dim {config.input_dim}")

    rng = np.random.default_rng(seed)
    params = init_docmodel_params(config, rng)
    by_length = np.argsort([s.num_segments for s in train_seqs], kind="stable")
    batch_starts = list(range(0, len(train_seqs), batch_size))

    valid_loss, valid_acc = _valid_metrics(params, config, valid_seqs, batch_size)
    metrics = [
        {"epoch": 0, "train_loss": None, "valid_loss": valid_loss, "valid_acc": valid_acc, "lr": settings.lr}
    ]
    best = ag.clone_params(params)
    best_acc, best_epoch = valid_acc, 0
    if epochs == 0:
        return DocTrainResult(params=params, metrics=metrics, best_epoch=0, best_valid_accuracy=best_acc)

    state = AdamState()
    total_steps = len(batch_starts) * epochs
    stale = 0
    aborted = False
    lr = plateau.lr if plateau is not None else settings.lr
    for epoch in range(1, epochs + 1):
        epoch_loss = 0.0
        try:
            for start_idx in rng.permutation(len(batch_starts)):
                lo = batch_starts[start_idx]
                sel = by_length[lo : lo + batch_size]
                feats, lengths, labels = next(_batch_iter(train_seqs, sel, len(sel)))
                ag.zero_grads(params.values())
                logits = _batch_logits(params, config, feats, lengths, training=True, rng=rng)
                loss = cross_entropy(logits, labels)
                ag.backward(loss)
                grads = {k: p.grad for k, p in params.items() if p.grad is not None}
                step_lr = lr * warmup_scale(settings, state.step + 1, total_steps)
                adam_step(params, grads, state, settings, lr=step_lr)
                epoch_loss += loss.item() * len(labels)
        except ag.NumericsError:
            aborted = True
            ag.load_param_values(params, best)
            metrics.append(
                {"epoch": epoch, "train_loss": None, "valid_loss": None, "valid_acc": None, "lr": lr}
            )
            break
        valid_loss, valid_acc = _valid_metrics(params, config, valid_seqs, batch_size)
        metrics.append(
            {
                "epoch": epoch,
                "train_loss": epoch_loss / len(train_seqs),
                "valid_loss": valid_loss,
                "valid_acc": valid_acc,
                "lr": lr,
            }
        )
        if valid_acc >= best_acc:
            stale = 0 if valid_acc > best_acc else stale + 1
            best_acc = valid_acc
            best = ag.clone_params(params)
            best_epoch = epoch
        else:
            stale += 1
        if plateau is not None and valid_seqs:
            lr = plateau_update(plateau, valid_loss)
        if stale >= early_stop_patience:
            break
    ag.load_param_values(params, best)
    return DocTrainResult(
        params=params,
        metrics=metrics,
        best_epoch=best_epoch,
        best_valid_accuracy=best_acc,
        aborted=aborted,
    )
