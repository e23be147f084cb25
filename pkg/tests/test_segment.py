"""Windowing checks against a brute-force coverage enumerator."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hierdoc.segment import (
    SegmentPlan,
    coverage_count,
    materialize_segments,
    plan_segments,
    segment_document,
)
from hierdoc.text import CLS_ID, PAD_ID, SEP_ID, Document


def enumerate_windows(doc_length, segment_size, stride):
    """Brute-force window list: advance by stride until the end is reached."""
    windows = [(0, min(segment_size, doc_length))]
    start = 0
    while start + segment_size < doc_length:
        start += stride
        windows.append((start, min(start + segment_size, doc_length)))
    return windows


class TestPlan:
    def test_document_fitting_one_segment(self):
        plan = plan_segments(200, 200, 50)
        assert plan.count == 1 and plan.starts == (0,)

    def test_csat_average_length_needs_13_segments(self):
        # 1 + ceil((787 - 200) / 50) confirmed by the enumerator below
        plan = plan_segments(787, 200, 50)
        assert plan.count == 13
        assert plan.count == len(enumerate_windows(787, 200, 50))

    def test_small_overlap_case(self):
        plan = plan_segments(250, 200, 50)
        assert plan.starts == (0, 50)

    def test_last_window_reaches_final_token(self):
        for length in (1, 199, 200, 201, 399, 1000):
            plan = plan_segments(length, 200, 50)
            assert plan.starts[-1] + plan.segment_size >= length

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            plan_segments(0, 200, 50)
        with pytest.raises(ValueError):
            plan_segments(100, 50, 60)
        with pytest.raises(ValueError):
            plan_segments(100, 200, 0)

    @given(
        st.integers(min_value=1, max_value=1000),
        st.integers(min_value=1, max_value=300),
        st.data(),
    )
    @settings(max_examples=200, deadline=None)
    def test_matches_enumerator_and_coverage_formula(self, length, size, data):
        stride = data.draw(st.integers(min_value=1, max_value=size))
        plan = plan_segments(length, size, stride)
        windows = enumerate_windows(length, size, stride)
        assert plan.count == len(windows)
        assert plan.starts == tuple(w[0] for w in windows)
        hits = np.zeros(length, dtype=int)
        for lo, hi in windows:
            hits[lo:hi] += 1
        assert hits.min() >= 1
        for idx in range(length):
            assert coverage_count(plan, idx) == hits[idx]

    @given(st.integers(min_value=1, max_value=2000))
    @settings(max_examples=100, deadline=None)
    def test_count_monotone_in_length(self, length):
        a = plan_segments(length, 200, 50).count
        b = plan_segments(length + 1, 200, 50).count
        assert b >= a

    @given(st.integers(min_value=1, max_value=200))
    @settings(max_examples=50, deadline=None)
    def test_short_documents_take_one_segment(self, length):
        assert plan_segments(length, 200, 50).count == 1


class TestMaterialize:
    def test_tiny_document_row_layout(self):
        doc = Document(id="d", token_ids=[7, 8, 9], label=0, split="train")
        batch = materialize_segments(doc, plan_segments(3, 4, 4))
        np.testing.assert_array_equal(batch.token_ids, [[CLS_ID, 7, 8, 9, SEP_ID, PAD_ID]])
        np.testing.assert_array_equal(batch.mask, [[1, 1, 1, 1, 1, 0]])

    def test_second_window_is_full_without_padding(self):
        doc = Document(id="d", token_ids=list(range(100, 350)), label=0, split="train")
        batch = materialize_segments(doc, plan_segments(250, 200, 50))
        row = batch.token_ids[1]
        assert row[0] == CLS_ID and row[-1] == SEP_ID
        np.testing.assert_array_equal(row[1:-1], np.arange(150, 350))
        assert batch.mask[1].all()

    def test_unmasked_content_covers_every_token(self):
        tokens = list(range(10, 333))
        doc = Document(id="d", token_ids=tokens, label=0, split="train")
        plan = plan_segments(len(tokens), 37, 11)
        batch = materialize_segments(doc, plan)
        seen = set()
        for row, mask in zip(batch.token_ids, batch.mask):
            content = row[(mask > 0)][1:-1]  # strip CLS and SEP
            seen.update(int(v) for v in content)
        assert seen == set(tokens)

    def test_length_mismatch_rejected(self):
        doc = Document(id="d", token_ids=[5, 6], label=0, split="train")
        with pytest.raises(ValueError):
            materialize_segments(doc, plan_segments(3, 4, 4))

    def test_truncation_to_max_segments_warns(self, caplog):
        doc = Document(id="d", token_ids=list(range(4, 1004)), label=0, split="train")
        with caplog.at_level("WARNING"):
            batch = segment_document(doc, 200, 50, max_segments=5)
        assert batch.num_segments == 5
        assert "truncating" in caplog.text
