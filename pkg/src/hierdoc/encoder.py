"""Miniature BERT-style segment encoder.

Each segment row (CLS + content + SEP + padding) runs through learned token
and position embeddings and a stack of post-norm transformer layers. Two
outputs per segment: the pooled vector H, a tanh-affine readout of the
final hidden state at the CLS position, and the posterior P, a softmax
affine head over H. Padding is excluded through additive attention masking,
so PAD token ids can never influence either output.

``fine_tune_segments`` trains the encoder on (segment, parent-document
label) pairs and keeps the parameters with the best validation segment
accuracy. ``count_flops`` compares the quadratic cost of attending over a
whole document against the windowed scheme.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Iterator, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .segment import SegmentBatch, plan_segments, segment_document
from .text import Document
from .training import AdamState, OptimizerSettings, adam_step, warmup_scale


@dataclass
class EncoderConfig:
    layers: int = 4
    heads: int = 4
    d_model: int = 128
    d_ff: int = 512
    max_positions: int = 202
    vocab_size: int = 8000
    num_classes: int = 2
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.max_positions < 3:
            raise ValueError("max_positions must fit CLS + one token + SEP")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderConfig":
        return cls(**data)


def truncated_normal(
    rng: np.random.Generator, shape: tuple[int, ...], std: float = 0.02, dtype=np.float32
) -> np.ndarray:
    """Normal draws with resampling beyond two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while np.any(bad):
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(dtype)


def init_transformer_layer(
    rng: np.random.Generator, prefix: str, d_model: int, d_ff: int, dtype=np.float32
) -> dict[str, Tensor]:
    """Parameters of one post-norm attention + feed-forward block."""
    def w(shape):
        return Tensor(truncated_normal(rng, shape, dtype=dtype), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def ones(*shape):
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    return {
        f"{prefix}.wq": w((d_model, d_model)),
        f"{prefix}.bq": zeros(d_model),
        f"{prefix}.wk": w((d_model, d_model)),
        f"{prefix}.bk": zeros(d_model),
        f"{prefix}.wv": w((d_model, d_model)),
        f"{prefix}.bv": zeros(d_model),
        f"{prefix}.wo": w((d_model, d_model)),
        f"{prefix}.bo": zeros(d_model),
        f"{prefix}.ln1_g": ones(d_model),
        f"{prefix}.ln1_b": zeros(d_model),
        f"{prefix}.w1": w((d_model, d_ff)),
        f"{prefix}.b1": zeros(d_ff),
        f"{prefix}.w2": w((d_ff, d_model)),
        f"{prefix}.b2": zeros(d_model),
        f"{prefix}.ln2_g": ones(d_model),
        f"{prefix}.ln2_b": zeros(d_model),
    }


def init_encoder_params(
    config: EncoderConfig, rng: np.random.Generator, dtype=np.float32
) -> dict[str, Tensor]:
    d = config.d_model
    params: dict[str, Tensor] = {
        "tok_emb": Tensor(truncated_normal(rng, (config.vocab_size, d), dtype=dtype), requires_grad=True),
        "pos_emb": Tensor(truncated_normal(rng, (config.max_positions, d), dtype=dtype), requires_grad=True),
        "emb_ln_g": Tensor(np.ones(d, dtype=dtype), requires_grad=True),
        "emb_ln_b": Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
        "pool_w": Tensor(truncated_normal(rng, (d, d), dtype=dtype), requires_grad=True),
        "pool_b": Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
        "cls_w": Tensor(truncated_normal(rng, (d, config.num_classes), dtype=dtype), requires_grad=True),
        "cls_b": Tensor(np.zeros(config.num_classes, dtype=dtype), requires_grad=True),
    }
    for i in range(config.layers):
        params.update(init_transformer_layer(rng, f"l{i}", d, config.d_ff, dtype=dtype))
    return params


def scaled_dot_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    key_mask: np.ndarray,
    heads: int,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Multi-head scaled dot-product attention over (B, T, d) inputs.

    ``key_mask`` is (B, T) with 1 for usable key positions; masked keys get
    an additive -1e9 logit, which underflows to an exactly-zero weight.
    Dropout, when enabled, is applied to the attention weights.
    """
    b, t, d = q.shape
    if d % heads != 0:
        raise ValueError(f"model width {d} not divisible by {heads} heads")
    key_mask = np.asarray(key_mask)
    if key_mask.shape != (b, t):
        raise ValueError(f"key mask shape {key_mask.shape} does not match ({b}, {t})")
    if np.any(key_mask.sum(axis=-1) == 0):
        raise ValueError("attention received a row with all keys masked")
    dh = d // heads

    def split(x: Tensor) -> Tensor:
        return ag.transpose(x.reshape(b, t, heads, dh), (0, 2, 1, 3))

    qh, kh, vh = split(q), split(k), split(v)
    scores = qh @ ag.transpose(kh, (0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
    if not key_mask.all():
        bias = ((1.0 - key_mask) * ag.MASK_FILL).astype(q.dtype)[:, None, None, :]
        scores = scores + ag.constant(bias)
    weights = ag.softmax(scores, axis=-1)
    if rng is not None and dropout > 0:
        weights = ag.dropout(weights, dropout, rng)
    ctx = weights @ vh
    return ag.transpose(ctx, (0, 2, 1, 3)).reshape(b, t, d)


def transformer_layer(
    x: Tensor,
    params: dict[str, Tensor],
    prefix: str,
    heads: int,
    key_mask: np.ndarray,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Post-norm block: attention, add + norm, GELU feed-forward, add + norm.

    Dropout sits on the attention weights and the feed-forward output and
    is skipped entirely when ``rng`` is None (evaluation).
    """
    p = params
    q = x @ p[f"{prefix}.wq"] + p[f"{prefix}.bq"]
    k = x @ p[f"{prefix}.wk"] + p[f"{prefix}.bk"]
    v = x @ p[f"{prefix}.wv"] + p[f"{prefix}.bv"]
    attn = scaled_dot_attention(q, k, v, key_mask, heads, dropout=dropout, rng=rng)
    attn = attn @ p[f"{prefix}.wo"] + p[f"{prefix}.bo"]
    h = ag.layer_norm(x + attn, p[f"{prefix}.ln1_g"], p[f"{prefix}.ln1_b"])
    ff = ag.gelu(h @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"]) @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"]
    if rng is not None and dropout > 0:
        ff = ag.dropout(ff, dropout, rng)
    return ag.layer_norm(h + ff, p[f"{prefix}.ln2_g"], p[f"{prefix}.ln2_b"])


def encoder_hidden(
    params: dict[str, Tensor],
    config: EncoderConfig,
    token_ids: np.ndarray,
    mask: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Hidden states (B, T, d_model) for a batch of segment rows."""
    token_ids = np.asarray(token_ids)
    b, t = token_ids.shape
    if t > config.max_positions:
        raise ValueError(f"segment width {t} exceeds max_positions {config.max_positions}")
    drop_rng = rng if training else None
    x = ag.embedding(params["tok_emb"], token_ids) + ag.embedding(
        params["pos_emb"], np.arange(t, dtype=np.int64)
    )
    x = ag.layer_norm(x, params["emb_ln_g"], params["emb_ln_b"])
    for i in range(config.layers):
        x = transformer_layer(
            x, params, f"l{i}", config.heads, mask, dropout=config.dropout, rng=drop_rng
        )
    return x


def pooled_output(params: dict[str, Tensor], hidden: Tensor) -> Tensor:
    """H per segment: tanh-affine over the final hidden state at CLS."""
    return ag.tanh(hidden[:, 0, :] @ params["pool_w"] + params["pool_b"])


def segment_logits(
    params: dict[str, Tensor],
    config: EncoderConfig,
    token_ids: np.ndarray,
    mask: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """(H, class logits) for a batch of segment rows; the training path."""
    hidden = encoder_hidden(params, config, token_ids, mask, training=training, rng=rng)
    pooled = pooled_output(params, hidden)
    logits = pooled @ params["cls_w"] + params["cls_b"]
    return pooled, logits


def encode_segments(
    params: dict[str, Tensor], config: EncoderConfig, batch: SegmentBatch
) -> np.ndarray:
    """Pooled representations H, shape (num_segments, d_model)."""
    with ag.no_grad():
        hidden = encoder_hidden(params, config, batch.token_ids, batch.mask)
        return pooled_output(params, hidden).data


def classify_segments(params: dict[str, Tensor], pooled: np.ndarray) -> np.ndarray:
    """Posteriors P from pooled vectors, shape (num_segments, num_classes)."""
    with ag.no_grad():
        logits = Tensor(pooled) @ params["cls_w"] + params["cls_b"]
        return ag.softmax(logits, axis=-1).data


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits``."""
    lsm = ag.log_softmax(logits, axis=-1)
    picked = lsm[np.arange(len(labels)), np.asarray(labels)]
    return -picked.mean()


@dataclass
class SegmentDataset:
    """All segments of a document collection, flattened for minibatching."""

    token_ids: np.ndarray  # (N, width) int32
    mask: np.ndarray  # (N, width) float32
    labels: np.ndarray  # (N,) int64, inherited from the parent document
    doc_index: np.ndarray  # (N,) int64 position of the parent in the doc list


def build_segment_dataset(
    docs: Sequence[Document],
    segment_size: int = 200,
    stride: int = 50,
    max_segments: int | None = None,
) -> SegmentDataset:
    ids, masks, labels, owners = [], [], [], []
    for i, doc in enumerate(docs):
        batch = segment_document(doc, segment_size, stride, max_segments)
        ids.append(batch.token_ids)
        masks.append(batch.mask)
        labels.append(np.full(batch.num_segments, doc.label, dtype=np.int64))
        owners.append(np.full(batch.num_segments, i, dtype=np.int64))
    return SegmentDataset(
        token_ids=np.concatenate(ids),
        mask=np.concatenate(masks),
        labels=np.concatenate(labels),
        doc_index=np.concatenate(owners),
    )


def _segment_accuracy(
    params: dict[str, Tensor], config: EncoderConfig, data: SegmentDataset, batch_size: int
) -> float:
    hits = 0
    with ag.no_grad():
        for lo in range(0, len(data.labels), batch_size):
            sl = slice(lo, lo + batch_size)
            _, logits = segment_logits(params, config, data.token_ids[sl], data.mask[sl])
            hits += int(np.sum(logits.data.argmax(axis=-1) == data.labels[sl]))
    return hits / len(data.labels)


@dataclass
class FineTuneResult:
    params: dict[str, Tensor]
    metrics: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    aborted: bool = False


def fine_tune_segments(
    train_docs: Sequence[Document],
    valid_docs: Sequence[Document],
    config: EncoderConfig,
    settings: OptimizerSettings,
    epochs: int,
    segment_size: int = 200,
    stride: int = 50,
    batch_size: int = 32,
    seed: int = 0,
    max_segments: int | None = None,
) -> FineTuneResult:
    """Train the encoder on segments labeled with their parent's label.

    Minimizes mean cross-entropy over every segment of every training
    document; returns the parameters of the epoch with the best validation
    segment accuracy (later epochs win ties). A non-finite loss aborts the
    run and the last finite checkpoint is returned with ``aborted`` set.
    """
    if not train_docs:
        raise ValueError("fine-tuning requires a non-empty training set")
    rng = np.random.default_rng(seed)
    params = init_encoder_params(config, rng)
    train = build_segment_dataset(train_docs, segment_size, stride, max_segments)
    valid = build_segment_dataset(valid_docs, segment_size, stride, max_segments)

    metrics: list[dict] = []
    best = ag.clone_params(params)
    best_acc = _segment_accuracy(params, config, valid, batch_size) if len(valid.labels) else 0.0
    best_epoch = 0
    metrics.append({"epoch": 0, "train_loss": None, "valid_acc": best_acc, "lr": settings.lr})
    if epochs == 0:
        return FineTuneResult(params=params, metrics=metrics, best_epoch=0)

    state = AdamState()
    n = len(train.labels)
    steps_per_epoch = math.ceil(n / batch_size)
    total_steps = steps_per_epoch * epochs
    aborted = False
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        try:
            for lo in range(0, n, batch_size):
                sel = order[lo : lo + batch_size]
                ag.zero_grads(params.values())
                _, logits = segment_logits(
                    params, config, train.token_ids[sel], train.mask[sel], training=True, rng=rng
                )
                loss = cross_entropy(logits, train.labels[sel])
                ag.backward(loss)
                grads = {k: p.grad for k, p in params.items() if p.grad is not None}
                lr = settings.lr * warmup_scale(settings, state.step + 1, total_steps)
                adam_step(params, grads, state, settings, lr=lr)
                epoch_loss += loss.item() * len(sel)
        except ag.NumericsError:
            aborted = True
            ag.load_param_values(params, best)
            metrics.append({"epoch": epoch, "train_loss": None, "valid_acc": None, "lr": settings.lr})
            break
        valid_acc = _segment_accuracy(params, config, valid, batch_size) if len(valid.labels) else 0.0
        metrics.append(
            {"epoch": epoch, "train_loss": epoch_loss / n, "valid_acc": valid_acc, "lr": settings.lr}
        )
        if valid_acc >= best_acc:
            best_acc = valid_acc
            best = ag.clone_params(params)
            best_epoch = epoch
    ag.load_param_values(params, best)
    return FineTuneResult(params=params, metrics=metrics, best_epoch=best_epoch, aborted=aborted)


# -- cost accounting ---------------------------------------------------------


@dataclass(frozen=True)
class FlopEstimate:
    """Multiply-accumulate counts split into quadratic and linear parts."""

    attention: float
    linear: float

    @property
    def total(self) -> float:
        return self.attention + self.linear


def count_flops(
    doc_length: int,
    segment_size: int,
    stride: int,
    config: EncoderConfig,
    mode: str = "segmented",
) -> FlopEstimate:
    """Estimated MACs to encode one document of ``doc_length`` tokens.

    The attention term is quadratic: over the whole document in
    ``full_attention`` mode, or per window in ``segmented`` mode. Token-wise
    linear work (projections, feed-forward, embeddings, heads) is counted
    once per document token; window overlap only multiplies the quadratic
    term, matching the usual asymptotic accounting for sliding windows.
    """
    if doc_length < 1:
        raise ValueError("doc_length must be >= 1")
    d, f = config.d_model, config.d_ff
    per_token_linear = 4 * d * d + 2 * d * f  # q/k/v/out projections + feed-forward
    linear = config.layers * doc_length * per_token_linear + doc_length * d
    if mode == "full_attention":
        attention = config.layers * 2.0 * doc_length**2 * d
        linear += d * d + d * config.num_classes  # one pooler + classifier pass
    elif mode == "segmented":
        plan = plan_segments(doc_length, segment_size, stride)
        width = segment_size + 2
        attention = config.layers * plan.count * 2.0 * width**2 * d
        linear += plan.count * (d * d + d * config.num_classes)
    else:
        raise ValueError(f"unknown mode '{mode}'")
    return FlopEstimate(attention=float(attention), linear=float(linear))
