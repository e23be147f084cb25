"""Optimizers, learning-rate scheduling, and evaluation protocol.

Two optimizer kinds: plain Adam with bias correction, and Adam with
decoupled weight decay plus linear warmup. The recurrent document model is
tuned with plain Adam at 1e-3 under a reduce-on-plateau rule (factor 0.95
after 3 stale epochs); the transformer document model uses the decayed
variant at 5e-5 with warmup and no plateau rule.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autograd import Tensor

__all__ = [
    "OptimizerSettings",
    "AdamState",
    "adam_step",
    "warmup_scale",
    "PlateauSchedule",
    "plateau_update",
    "evaluate_accuracy",
    "bucketed_accuracy",
    "BucketRow",
    "SeedResult",
    "RunReport",
    "multi_seed_run",
]


@dataclass
class OptimizerSettings:
    kind: str = "adam"  # "adam" or "adam_weight_decay"
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    warmup_fraction: float = 0.1

    def __post_init__(self):
        if self.kind not in ("adam", "adam_weight_decay"):
            raise ValueError(f"unknown optimizer kind '{self.kind}'")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in [0, 1)")


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    settings: OptimizerSettings,
    lr: float | None = None,
) -> AdamState:
    """One in-place Adam update; ``lr`` overrides the configured rate.

    With the ``adam_weight_decay`` kind, decoupled decay is applied after
    the adaptive step. Parameters without a gradient entry are untouched.
    """
    rate = settings.lr if lr is None else lr
    if rate <= 0:
        raise ValueError("learning rate must be positive")
    b1, b2 = settings.betas
    state.step += 1
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.data.shape:
            raise ValueError(
                f"gradient shape {grad.shape} does not match parameter '{name}' {param.data.shape}"
            )
        if name not in state.m:
            state.m[name] = np.zeros_like(param.data, dtype=np.float64)
            state.v[name] = np.zeros_like(param.data, dtype=np.float64)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        update = (m / correction1) / (np.sqrt(v / correction2) + settings.epsilon)
        if settings.kind == "adam_weight_decay" and settings.weight_decay > 0:
            update = update + settings.weight_decay * param.data
        param.data = (param.data - rate * update).astype(param.data.dtype)
    return state


def warmup_scale(settings: OptimizerSettings, step: int, total_steps: int) -> float:
    """Linear warmup multiplier over the first ``warmup_fraction`` of steps."""
    if settings.kind != "adam_weight_decay" or settings.warmup_fraction == 0.0:
        return 1.0
    warmup_steps = max(1, int(settings.warmup_fraction * total_steps))
    return min(1.0, step / warmup_steps)


@dataclass
class PlateauSchedule:
    """Multiply lr by ``factor`` after ``patience`` stale validation epochs."""

    lr: float
    factor: float = 0.95
    patience: int = 3
    best_loss: float = math.inf
    stale_epochs: int = 0
    reductions: int = 0

    def __post_init__(self):
        if not 0.0 < self.factor < 1.0:
            raise ValueError("factor must lie in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


def plateau_update(schedule: PlateauSchedule, val_loss: float) -> float:
    """Feed one epoch's validation loss; returns the (possibly reduced) lr.

    The stale counter resets both on improvement and on a reduction.
    """
    if not math.isfinite(val_loss):
        raise ValueError("validation loss must be finite")
    if val_loss < schedule.best_loss:
        schedule.best_loss = val_loss
        schedule.stale_epochs = 0
    else:
        schedule.stale_epochs += 1
        if schedule.stale_epochs >= schedule.patience:
            schedule.lr *= schedule.factor
            schedule.reductions += 1
            schedule.stale_epochs = 0
    return schedule.lr


def evaluate_accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError(f"length mismatch: {predictions.shape} vs {labels.shape}")
    if predictions.size == 0:
        raise ValueError("cannot score an empty prediction set")
    return float(np.mean(predictions == labels))


@dataclass
class BucketRow:
    low: int
    high: int
    count: int
    accuracy: float | None


def bucketed_accuracy(
    predictions: Sequence[int],
    labels: Sequence[int],
    doc_lengths: Sequence[int],
    bucket_edges: Sequence[int],
) -> list[BucketRow]:
    """Accuracy per document-length range; ranges are [edge_i, edge_{i+1}).

    The final bucket is closed on the right so the largest edge is usable.
    Empty buckets report count 0 and accuracy None.
    """
    edges = list(bucket_edges)
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("bucket edges must be strictly increasing with >= 2 entries")
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    lengths = np.asarray(doc_lengths)
    if not (predictions.shape == labels.shape == lengths.shape):
        raise ValueError("predictions, labels and doc_lengths must align")
    if lengths.size and (lengths.min() < edges[0] or lengths.max() > edges[-1]):
        raise ValueError("every document length must fall inside the bucket edges")
    rows: list[BucketRow] = []
    for low, high in zip(edges, edges[1:]):
        if high == edges[-1]:
            sel = (lengths >= low) & (lengths <= high)
        else:
            sel = (lengths >= low) & (lengths < high)
        count = int(sel.sum())
        acc = float(np.mean(predictions[sel] == labels[sel])) if count else None
        rows.append(BucketRow(low=low, high=high, count=count, accuracy=acc))
    return rows


@dataclass
class SeedResult:
    seed: int
    test_accuracy: float
    curves: list[dict] = field(default_factory=list)
    extras: dict = field(default_factory=dict)


@dataclass
class RunReport:
    """Per-seed accuracies plus their arithmetic mean and the run config."""

    per_seed: list[SeedResult]
    mean_accuracy: float
    config: dict
    incomplete: bool = False
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


def multi_seed_run(
    run_fn: Callable[[int], SeedResult],
    seeds: Sequence[int],
    config: dict | None = None,
) -> RunReport:
    """Run the full train/select/test cycle once per seed and average.

    A failing seed stops the protocol; the partial report is returned with
    ``incomplete`` set and the error message attached.
    """
    seeds = list(seeds)
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct")
    results: list[SeedResult] = []
    for seed in seeds:
        try:
            results.append(run_fn(seed))
        except Exception as exc:  # noqa: BLE001 - partial report carries the cause
            mean = float(np.mean([r.test_accuracy for r in results])) if results else math.nan
            return RunReport(
                per_seed=results,
                mean_accuracy=mean,
                config=config or {},
                incomplete=True,
                error=f"seed {seed}: {exc}",
            )
    mean = float(np.mean([r.test_accuracy for r in results]))
    return RunReport(per_seed=results, mean_accuracy=mean, config=config or {})


def write_curves_csv(curves: list[dict], path: str | Path) -> None:
    """Epoch-level training curves as CSV (epoch, losses, accuracy, lr)."""
    import csv

    fields = ["epoch", "train_loss", "valid_loss", "valid_acc", "lr"]
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for row in curves:
            writer.writerow(row)
