"""Checkpoint and feature-store round trips."""

import numpy as np
import pytest

from hierdoc.docmodel import SegmentSequence
from hierdoc.encoder import EncoderConfig, init_encoder_params
from hierdoc.store import (
    StoreError,
    file_sha256,
    load_checkpoint,
    read_feature_store,
    save_checkpoint,
    write_feature_store,
)

RNG = np.random.default_rng(23)


def small_params():
    config = EncoderConfig(
        layers=1, heads=2, d_model=8, d_ff=16, max_positions=6, vocab_size=10, num_classes=2
    )
    return config, init_encoder_params(config, np.random.default_rng(0))


class TestCheckpoint:
    def test_roundtrip_is_bit_exact(self, tmp_path):
        config, params = small_params()
        path = tmp_path / "enc.ckpt"
        digest = save_checkpoint(
            path, "encoder", params, config.to_dict(), {"neg": 0, "pos": 1}, {"note": "t"}
        )
        ckpt = load_checkpoint(path)
        assert ckpt.kind == "encoder"
        assert ckpt.content_hash == digest == file_sha256(path)
        assert ckpt.config == config.to_dict()
        assert ckpt.label_map == {"neg": 0, "pos": 1}
        assert set(ckpt.params) == set(params)
        for name, tensor in params.items():
            np.testing.assert_array_equal(ckpt.params[name], tensor.data)

    def test_rewriting_identical_content_matches_hash(self, tmp_path):
        config, params = small_params()
        h1 = save_checkpoint(tmp_path / "a.ckpt", "encoder", params, config.to_dict(), {})
        h2 = save_checkpoint(tmp_path / "b.ckpt", "encoder", params, config.to_dict(), {})
        assert h1 == h2

    def test_truncated_file_detected(self, tmp_path):
        config, params = small_params()
        path = tmp_path / "enc.ckpt"
        save_checkpoint(path, "encoder", params, config.to_dict(), {})
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 8])
        with pytest.raises(StoreError, match="truncated"):
            load_checkpoint(path)

    def test_tensor_reload_for_training(self, tmp_path):
        config, params = small_params()
        path = tmp_path / "enc.ckpt"
        save_checkpoint(path, "encoder", params, config.to_dict(), {})
        tensors = load_checkpoint(path).tensors()
        assert all(t.requires_grad for t in tensors.values())
        np.testing.assert_array_equal(tensors["tok_emb"].data, params["tok_emb"].data)


def make_sequences(n=10, width=6):
    out = []
    for i in range(n):
        feats = RNG.normal(size=(int(RNG.integers(1, 5)), width)).astype(np.float32)
        out.append(SegmentSequence(doc_id=f"d{i}", features=feats, label=i % 3))
    return out


class TestFeatureStore:
    def test_roundtrip_is_bit_exact(self, tmp_path):
        seqs = make_sequences()
        path = tmp_path / "train.feats"
        write_feature_store(path, seqs, "H", "abc123")
        loaded, header = read_feature_store(path)
        assert header["repr"] == "H" and header["source_checkpoint"] == "abc123"
        assert len(loaded) == len(seqs)
        for a, b in zip(seqs, loaded):
            assert a.doc_id == b.doc_id and a.label == b.label
            np.testing.assert_array_equal(a.features, b.features)

    def test_thirteen_segment_document_records_its_count(self, tmp_path):
        # An average-length conversation segments into 13 windows at 200/50.
        seqs = [SegmentSequence(doc_id="d", features=np.zeros((13, 4), dtype=np.float32), label=0)]
        path = tmp_path / "s.feats"
        write_feature_store(path, seqs, "H", "x")
        _, header = read_feature_store(path)
        assert header["docs"][0]["num_segments"] == 13

    def test_strict_mode_rejects_wrong_checkpoint(self, tmp_path):
        path = tmp_path / "t.feats"
        write_feature_store(path, make_sequences(3), "H", "hash-one")
        read_feature_store(path, expected_source="hash-two", strict=False)
        with pytest.raises(StoreError, match="checkpoint"):
            read_feature_store(path, expected_source="hash-two", strict=True)

    def test_mixed_widths_rejected(self, tmp_path):
        seqs = [
            SegmentSequence(doc_id="a", features=np.zeros((2, 4), dtype=np.float32), label=0),
            SegmentSequence(doc_id="b", features=np.zeros((2, 5), dtype=np.float32), label=0),
        ]
        with pytest.raises(StoreError, match="width"):
            write_feature_store(tmp_path / "w.feats", seqs, "H", "x")

    def test_invalid_repr_kind_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_feature_store(tmp_path / "r.feats", make_sequences(1), "Q", "x")

    def test_width_guard_when_feeding_wrong_model(self, tmp_path):
        """An H store cannot silently feed a model configured for P width."""
        from hierdoc.docmodel import DocModelConfig, train_document_model
        from hierdoc.training import OptimizerSettings

        path = tmp_path / "h.feats"
        write_feature_store(path, make_sequences(6, width=8), "H", "x")
        loaded, _ = read_feature_store(path)
        config = DocModelConfig(kind="robert", input_dim=3, num_classes=3)
        with pytest.raises(ValueError, match="width"):
            train_document_model(loaded, [], config, OptimizerSettings(), epochs=1)
