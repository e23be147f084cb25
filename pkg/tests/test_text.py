"""Vocabulary, ingestion, and corpus statistics checks."""

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hierdoc.text import (
    CLS_ID,
    PAD_ID,
    SEP_ID,
    UNK_ID,
    DatasetError,
    Vocabulary,
    build_vocab,
    compute_stats,
    export_stats,
    load_dataset,
    read_length_cdf,
    tokenize,
)


def write_jsonl(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows), encoding="utf-8")


class TestVocabulary:
    def test_tiny_corpus_and_unknown_token(self):
        vocab = build_vocab([["a", "a", "b"]], max_size=6)
        assert vocab.size == 6
        assert vocab.encode(["a", "b", "c"])[:2] == [4, 5]
        assert vocab.encode(["c"]) == [UNK_ID]

    def test_frequency_tie_breaks_lexicographically(self):
        vocab = build_vocab([["zebra", "apple"]], max_size=6)
        assert vocab.token_to_id["apple"] < vocab.token_to_id["zebra"]

    def test_size_cap_respected(self):
        corpus = [[f"tok{i}" for i in range(200)]]
        vocab = build_vocab(corpus, max_size=50)
        assert vocab.size <= 50
        big = build_vocab(corpus, max_size=53160)
        assert big.size <= 53160

    def test_specials_pinned(self):
        vocab = build_vocab([["x"]], max_size=10)
        assert (PAD_ID, UNK_ID, CLS_ID, SEP_ID) == (0, 1, 2, 3)
        assert vocab.id_to_token[PAD_ID] == "<pad>"

    def test_empty_corpus_rejected(self):
        with pytest.raises(DatasetError):
            build_vocab([], max_size=10)

    @given(st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=30))
    @settings(max_examples=50, deadline=None)
    def test_encode_decode_roundtrip_for_known_tokens(self, tokens):
        vocab = build_vocab([list("abcdefg")], max_size=20)
        ids = vocab.encode(tokens)
        assert vocab.encode(vocab.decode(ids)) == ids

    def test_serialization_roundtrip(self):
        vocab = build_vocab([["a", "b", "b"]], max_size=8)
        again = Vocabulary.from_list(vocab.to_list())
        assert again.token_to_id == vocab.token_to_id


class TestLoadDataset:
    def test_single_document_stats(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [{"id": "1", "text": "Hello World", "label": 0, "split": "train"}])
        docs, vocab, stats, label_map = load_dataset(path)
        assert stats.num_documents == 1
        assert stats.average_words == 2
        assert stats.longest == 2
        assert docs[0].token_ids == vocab.encode(["hello", "world"])

    def test_three_point_cdf(self):
        stats = compute_stats([1, 2, 3], num_classes=1)
        assert stats.length_cdf == [(1, 1 / 3), (2, 2 / 3), (3, 1.0)]

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "1", "text": "ok", "label": 0, "split": "train"}\n{bad json\n')
        with pytest.raises(DatasetError, match="line 2"):
            load_dataset(path)

    def test_unknown_split_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [{"id": "1", "text": "ok", "label": 0, "split": "dev"}])
        with pytest.raises(DatasetError, match="split"):
            load_dataset(path)

    def test_empty_text_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [{"id": "1", "text": "   ", "label": 0, "split": "train"}])
        with pytest.raises(DatasetError, match="empty text"):
            load_dataset(path)

    def test_string_labels_map_contiguously(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(
            path,
            [
                {"id": "1", "text": "a", "label": "pos", "split": "train"},
                {"id": "2", "text": "b", "label": "neg", "split": "test"},
            ],
        )
        docs, _, _, label_map = load_dataset(path)
        assert label_map == {"neg": 0, "pos": 1}
        assert [d.label for d in docs] == [1, 0]

    def test_noncontiguous_integer_labels_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(
            path,
            [
                {"id": "1", "text": "a", "label": 0, "split": "train"},
                {"id": "2", "text": "b", "label": 2, "split": "train"},
            ],
        )
        with pytest.raises(DatasetError, match="contiguous"):
            load_dataset(path)

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "absent.jsonl")

    def test_csat_shaped_corpus_reports_table_row(self, tmp_path):
        # 4331 documents averaging 787 words with a 10503-word maximum
        lengths = [10503, 4058] + [784] * 4329
        assert sum(lengths) == 787 * 4331
        rows = (
            json.dumps({"id": str(i), "text": "w " * n, "label": i % 2, "split": "train"})
            for i, n in enumerate(lengths)
        )
        path = tmp_path / "csat_like.jsonl"
        path.write_text("\n".join(rows), encoding="utf-8")
        _, _, stats, _ = load_dataset(path)
        assert stats.num_classes == 2
        assert stats.num_documents == 4331
        assert stats.average_words == 787
        assert stats.longest == 10503


class TestStatsExport:
    def test_single_document_emits_two_files(self, tmp_path):
        stats = compute_stats([5], num_classes=1)
        stats_path, cdf_path = export_stats(stats, tmp_path)
        assert stats_path.exists() and cdf_path.exists()
        assert len(read_length_cdf(cdf_path)) == 1

    def test_cdf_roundtrip_is_exact(self, tmp_path):
        rng = random.Random(3)
        stats = compute_stats([rng.randrange(1, 4000) for _ in range(500)], num_classes=3)
        _, cdf_path = export_stats(stats, tmp_path)
        assert read_length_cdf(cdf_path) == stats.length_cdf

    def test_cdf_fraction_at_median_split(self):
        lengths = [100] * 50 + [900] * 50
        stats = compute_stats(lengths, num_classes=2)
        below = [f for length, f in stats.length_cdf if length <= 500]
        assert below[-1] == 0.5

    def test_stats_invariant_under_document_order(self):
        lengths = [3, 14, 159, 26, 5]
        a = compute_stats(lengths, num_classes=2)
        b = compute_stats(list(reversed(lengths)), num_classes=2)
        assert a == b

    def test_cdf_monotone_ending_at_one(self):
        stats = compute_stats([4, 4, 9, 1, 77, 77, 77], num_classes=1)
        fractions = [f for _, f in stats.length_cdf]
        assert fractions == sorted(fractions)
        assert fractions[-1] == 1.0
