"""Controlled corpora for exercising the aggregation hierarchy.

Four generators, all emitting the standard JSONL row shape (id, text,
label, split) and fully reproducible from their seed:

* ``distributed_evidence``: the label is the XOR of two binary marker
  tokens planted far apart amid filler, so no single window carries any
  label information and only a document-level model can solve the task;
* ``order_sensitive``: the label says whether marker A appears before
  marker B; documents come in twin pairs whose window multisets are
  exactly equal, so permutation-invariant document functions sit at
  chance on them;
* ``separable``: a class token planted densely enough that every window
  determines the label on its own;
* ``null``: labels independent of content, for chance-level baselines.

Filler tokens are drawn uniformly from a vocabulary disjoint from all
marker tokens.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

MARKER_A = "mrka"
MARKER_B = "mrkb"

KINDS = ("distributed_evidence", "order_sensitive", "separable", "null")


@dataclass
class TaskSpec:
    kind: str
    num_train: int = 200
    num_valid: int = 50
    num_test: int = 50
    doc_length: int = 1000
    filler_vocab: int = 1000
    num_classes: int = 2
    segment_size: int = 200
    stride: int = 50
    marker_every: int = 50  # class-token planting period of the separable task
    marker_width: int = 16  # tokens per planted marker run
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown task kind '{self.kind}'")
        if min(self.num_train, self.num_valid, self.num_test) < 1:
            raise ValueError("every split needs at least one document")
        if self.filler_vocab < 2 or self.doc_length < 2:
            raise ValueError("degenerate filler vocabulary or document length")

    def to_dict(self) -> dict:
        return asdict(self)


def _split_sizes(spec: TaskSpec) -> list[tuple[str, int]]:
    return [("train", spec.num_train), ("valid", spec.num_valid), ("test", spec.num_test)]


def _fillers(rng: np.random.Generator, n: int, vocab: int) -> np.ndarray:
    return rng.integers(0, vocab, size=n)


def _filler_token(i: int) -> str:
    return f"w{i:04d}"


def _row(index: int, tokens: list[str], label: int, split: str) -> dict:
    return {"id": f"doc{index:06d}", "text": " ".join(tokens), "label": label, "split": split}


def _marker_slots(spec: TaskSpec, rng: np.random.Generator) -> tuple[int, int]:
    """Start positions for two marker runs no window can cover together.

    The runs land in opposite halves with at least one full window between
    the end of the first and the start of the second; in long documents
    both also stay a window away from the edges so every run position is
    covered by the full complement of windows.
    """
    length, size, width = spec.doc_length, spec.segment_size, spec.marker_width
    half_gap = (size + 1) // 2
    if length >= 3 * size + 2 * width + 2:
        lo1, hi1 = size, length // 2 - half_gap - width
        lo2, hi2 = length // 2 + half_gap, length - size - width
    else:
        lo1, hi1 = 0, length // 2 - half_gap - width
        lo2, hi2 = length // 2 + half_gap, length - width
    if lo1 >= hi1 or lo2 >= hi2:
        raise ValueError(
            f"doc_length {length} too short to separate markers by a full window of {size}"
        )
    return int(rng.integers(lo1, hi1)), int(rng.integers(lo2, hi2))


def _plant(tokens: list[str], start: int, marker: str, width: int) -> None:
    tokens[start : start + width] = [marker] * width


def _check_marker_width(spec: TaskSpec) -> None:
    if not 1 <= spec.marker_width <= spec.segment_size // 4:
        raise ValueError("marker_width must lie in [1, segment_size / 4]")


def gen_distributed_evidence(spec: TaskSpec) -> list[dict]:
    """Label = XOR of the two planted marker values ((A,A) and (B,B) are 0)."""
    if spec.doc_length < 2 * spec.segment_size:
        raise ValueError("doc_length must be at least twice segment_size")
    if spec.num_classes != 2:
        raise ValueError("the XOR construction is binary")
    _check_marker_width(spec)
    rng = np.random.default_rng(spec.seed)
    rows = []
    index = 0
    for split, count in _split_sizes(spec):
        for i in range(count):
            label = i % 2
            first = int(rng.integers(2))
            second = first if label == 0 else 1 - first
            p1, p2 = _marker_slots(spec, rng)
            ids = _fillers(rng, spec.doc_length, spec.filler_vocab)
            tokens = [_filler_token(t) for t in ids]
            _plant(tokens, p1, MARKER_A if first == 0 else MARKER_B, spec.marker_width)
            _plant(tokens, p2, MARKER_A if second == 0 else MARKER_B, spec.marker_width)
            rows.append(_row(index, tokens, label, split))
            index += 1
    return rows


def gen_order_sensitive(spec: TaskSpec) -> list[dict]:
    """Label 1 when marker A appears before marker B, 0 otherwise.

    Documents are generated in twin pairs sharing all filler: the two
    marker positions carry mirrored surrounding context (radius of one
    window) and sit a multiple of the stride apart, so swapping the marker
    values maps each marker-bearing window of one twin onto an identical
    window of the other and the window multisets coincide exactly.
    """
    length, size, stride = spec.doc_length, spec.segment_size, spec.stride
    width = spec.marker_width
    if spec.num_classes != 2:
        raise ValueError("the order construction is binary")
    _check_marker_width(spec)
    if any(count % 2 for _, count in _split_sizes(spec)):
        raise ValueError("order_sensitive splits must be even (documents come in pairs)")
    rng = np.random.default_rng(spec.seed)
    # the two mirrored blocks of radius one window must fit without overlap
    deltas = [
        d
        for d in range(2 * size + width + 1, length - 2 * size - width)
        if d % stride == 0
    ]
    if not deltas:
        raise ValueError(
            f"doc_length {length} too short to mirror window-sized contexts around both markers"
        )
    rows = []
    index = 0
    for split, count in _split_sizes(spec):
        for _ in range(count // 2):
            delta = int(deltas[rng.integers(len(deltas))])
            q1 = int(rng.integers(size, length - size - width - delta))
            q2 = q1 + delta
            ids = _fillers(rng, length, spec.filler_vocab)
            span = size + width
            ids[q2 - size : q2 + span + 1] = ids[q1 - size : q1 + span + 1]
            base = [_filler_token(t) for t in ids]
            a_first = list(base)
            _plant(a_first, q1, MARKER_A, width)
            _plant(a_first, q2, MARKER_B, width)
            b_first = list(base)
            _plant(b_first, q1, MARKER_B, width)
            _plant(b_first, q2, MARKER_A, width)
            rows.append(_row(index, a_first, 1, split))
            rows.append(_row(index + 1, b_first, 0, split))
            index += 2
    return rows


def gen_separable(spec: TaskSpec) -> list[dict]:
    """A class token planted every ``marker_every`` positions labels the doc."""
    if spec.marker_every > spec.segment_size:
        raise ValueError("marker_every must not exceed segment_size or windows may miss it")
    rng = np.random.default_rng(spec.seed)
    rows = []
    index = 0
    for split, count in _split_sizes(spec):
        for i in range(count):
            label = i % spec.num_classes
            ids = _fillers(rng, spec.doc_length, spec.filler_vocab)
            tokens = [_filler_token(t) for t in ids]
            for pos in range(spec.marker_every // 2, spec.doc_length, spec.marker_every):
                tokens[pos] = f"cls{label}"
            rows.append(_row(index, tokens, label, split))
            index += 1
    return rows


def gen_null(spec: TaskSpec) -> list[dict]:
    """Pure filler with content-independent labels."""
    rng = np.random.default_rng(spec.seed)
    rows = []
    index = 0
    for split, count in _split_sizes(spec):
        for i in range(count):
            ids = _fillers(rng, spec.doc_length, spec.filler_vocab)
            rows.append(_row(index, [_filler_token(t) for t in ids], i % spec.num_classes, split))
            index += 1
    return rows


_GENERATORS = {
    "distributed_evidence": gen_distributed_evidence,
    "order_sensitive": gen_order_sensitive,
    "separable": gen_separable,
    "null": gen_null,
}


def generate_dataset(spec: TaskSpec) -> list[dict]:
    return _GENERATORS[spec.kind](spec)


def expected_vocab_size(spec: TaskSpec) -> int:
    """Upper bound used when building vocabularies over generated corpora."""
    return spec.filler_vocab + spec.num_classes + len((MARKER_A, MARKER_B)) + 4


def write_jsonl(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row) + "\n")
    return path
