"""Overlapped fixed-size windowing of token sequences.

A document of L tokens is cut into windows of ``segment_size`` content
tokens advancing by ``stride``; the window count is
``1 + ceil(max(0, L - segment_size) / stride)``, which stops as soon as a
window reaches the last token (no trailing all-padding windows). Each
materialized row is CLS + content + SEP, padded to ``segment_size + 2``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .text import CLS_ID, PAD_ID, SEP_ID, Document, Vocabulary

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SegmentPlan:
    """Window starts for one document; starts advance by exactly ``stride``."""

    doc_length: int
    segment_size: int
    stride: int
    starts: tuple[int, ...]

    @property
    def count(self) -> int:
        return len(self.starts)


@dataclass
class SegmentBatch:
    """Materialized windows of one document.

    ``token_ids`` is (num_segments, segment_size + 2) with the row layout
    CLS, content, SEP, PAD...; ``mask`` is 1 on CLS/content/SEP and 0 on PAD.
    """

    doc_id: str
    token_ids: np.ndarray
    mask: np.ndarray
    segment_indices: np.ndarray

    @property
    def num_segments(self) -> int:
        return self.token_ids.shape[0]


def plan_segments(doc_length: int, segment_size: int = 200, stride: int = 50) -> SegmentPlan:
    """Window starts covering every token of a ``doc_length``-token document."""
    if doc_length < 1:
        raise ValueError(f"doc_length must be >= 1, got {doc_length}")
    if segment_size < 1 or stride < 1:
        raise ValueError("segment_size and stride must be positive")
    if stride > segment_size:
        raise ValueError(f"stride {stride} exceeds segment_size {segment_size}")
    count = 1 + math.ceil(max(0, doc_length - segment_size) / stride)
    starts = tuple(i * stride for i in range(count))
    return SegmentPlan(doc_length, segment_size, stride, starts)


def coverage_count(plan: SegmentPlan, index: int) -> int:
    """Closed-form number of windows containing token ``index``."""
    if not 0 <= index < plan.doc_length:
        raise ValueError(f"token index {index} outside document of {plan.doc_length}")
    t, s = plan.stride, plan.segment_size
    first = math.ceil(max(0, index - s + 1) / t)
    last = min(index // t, plan.count - 1)
    return last - first + 1


def materialize_segments(
    doc: Document, plan: SegmentPlan, vocab: Vocabulary | None = None
) -> SegmentBatch:
    """Fill the plan's windows with the document's token ids."""
    tokens = np.asarray(doc.token_ids, dtype=np.int32)
    if len(tokens) != plan.doc_length:
        raise ValueError(
            f"plan built for length {plan.doc_length} but document {doc.id} has {len(tokens)}"
        )
    if vocab is not None and tokens.size and int(tokens.max()) >= vocab.size:
        raise ValueError(f"document {doc.id} holds ids outside the vocabulary")
    width = plan.segment_size + 2
    ids = np.full((plan.count, width), PAD_ID, dtype=np.int32)
    mask = np.zeros((plan.count, width), dtype=np.float32)
    for row, start in enumerate(plan.starts):
        chunk = tokens[start : start + plan.segment_size]
        ids[row, 0] = CLS_ID
        ids[row, 1 : 1 + len(chunk)] = chunk
        ids[row, 1 + len(chunk)] = SEP_ID
        mask[row, : len(chunk) + 2] = 1.0
    return SegmentBatch(
        doc_id=doc.id,
        token_ids=ids,
        mask=mask,
        segment_indices=np.arange(plan.count, dtype=np.int32),
    )


def segment_document(
    doc: Document,
    segment_size: int = 200,
    stride: int = 50,
    max_segments: int | None = None,
    vocab: Vocabulary | None = None,
) -> SegmentBatch:
    """Plan and materialize in one step, truncating very long documents.

    Documents needing more than ``max_segments`` windows keep only the first
    ``max_segments`` (the segment-level positional table is finite).
    """
    plan = plan_segments(len(doc.token_ids), segment_size, stride)
    batch = materialize_segments(doc, plan, vocab)
    if max_segments is not None and batch.num_segments > max_segments:
        logger.warning(
            "document %s needs %d segments, truncating to %d",
            doc.id,
            batch.num_segments,
            max_segments,
        )
        batch = SegmentBatch(
            doc_id=batch.doc_id,
            token_ids=batch.token_ids[:max_segments],
            mask=batch.mask[:max_segments],
            segment_indices=batch.segment_indices[:max_segments],
        )
    return batch
