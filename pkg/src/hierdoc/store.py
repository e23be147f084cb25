"""On-disk formats: parameter checkpoints and per-split feature stores.

Both artifacts share one container layout: an 8-byte little-endian header
length, a UTF-8 JSON header, then contiguous little-endian float32 blocks.
The checkpoint header carries the format version, the model config, a
parameter manifest (name, shape, byte offset), the label map, and training
metadata; a feature store header carries document ids, labels, per-document
offsets, the feature width, and the hash of the checkpoint that produced
the features. Reads are bit-exact round trips of what was written.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autograd import Tensor
from .docmodel import SegmentSequence

FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")


class StoreError(RuntimeError):
    """Corrupt container, version mismatch, or failed strict-mode check."""


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_container(path: Path, header: dict, blocks: Sequence[np.ndarray]) -> None:
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        handle.write(_LEN.pack(len(payload)))
        handle.write(payload)
        for block in blocks:
            handle.write(np.ascontiguousarray(block, dtype="<f4").tobytes())


def _read_container(path: Path) -> tuple[dict, bytes]:
    with path.open("rb") as handle:
        raw = handle.read(_LEN.size)
        if len(raw) != _LEN.size:
            raise StoreError(f"{path}: truncated container")
        (header_len,) = _LEN.unpack(raw)
        payload = handle.read(header_len)
        if len(payload) != header_len:
            raise StoreError(f"{path}: truncated header")
        header = json.loads(payload.decode("utf-8"))
        data = handle.read()
    if header.get("format_version") != FORMAT_VERSION:
        raise StoreError(f"{path}: unsupported format_version {header.get('format_version')}")
    return header, data


# -- checkpoints -------------------------------------------------------------


@dataclass
class Checkpoint:
    kind: str  # "encoder" or "docmodel"
    config: dict
    params: dict[str, np.ndarray]
    label_map: dict[str, int]
    metadata: dict = field(default_factory=dict)
    content_hash: str = ""

    def tensors(self, dtype=np.float32) -> dict[str, Tensor]:
        return {
            name: Tensor(arr.astype(dtype, copy=True), requires_grad=True)
            for name, arr in self.params.items()
        }


def save_checkpoint(
    path: str | Path,
    kind: str,
    params: dict[str, Tensor],
    config: dict,
    label_map: dict[str, int],
    metadata: dict | None = None,
) -> str:
    """Serialize parameters in manifest order; returns the file's sha256."""
    path = Path(path)
    manifest = []
    blocks = []
    offset = 0
    for name in sorted(params):
        arr = params[name].data
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blocks.append(arr)
        offset += arr.size * 4
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "manifest": manifest,
        "label_map": label_map,
        "metadata": metadata or {},
    }
    _write_container(path, header, blocks)
    return file_sha256(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    header, data = _read_container(path)
    params: dict[str, np.ndarray] = {}
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        block = data[start : start + count * 4]
        if len(block) != count * 4:
            raise StoreError(f"{path}: parameter '{entry['name']}' truncated")
        params[entry["name"]] = np.frombuffer(block, dtype="<f4").reshape(shape).copy()
    return Checkpoint(
        kind=header["kind"],
        config=header["config"],
        params=params,
        label_map=header["label_map"],
        metadata=header["metadata"],
        content_hash=file_sha256(path),
    )


# -- feature stores ----------------------------------------------------------


def write_feature_store(
    path: str | Path,
    sequences: Sequence[SegmentSequence],
    repr_kind: str,
    source_hash: str,
) -> Path:
    """One split's segment-feature matrices in document order."""
    if repr_kind not in ("H", "P"):
        raise ValueError(f"repr_kind must be 'H' or 'P', got '{repr_kind}'")
    widths = {s.width for s in sequences}
    if len(widths) != 1:
        raise StoreError(f"sequences disagree on width: {sorted(widths)}")
    path = Path(path)
    docs = []
    blocks = []
    offset = 0
    for seq in sequences:
        docs.append(
            {
                "id": seq.doc_id,
                "label": seq.label,
                "num_segments": seq.num_segments,
                "doc_length": seq.doc_length,
                "offset": offset,
            }
        )
        blocks.append(seq.features)
        offset += seq.features.size * 4
    header = {
        "format_version": FORMAT_VERSION,
        "kind": "features",
        "repr": repr_kind,
        "source_checkpoint": source_hash,
        "width": widths.pop(),
        "docs": docs,
    }
    _write_container(path, header, blocks)
    return path


def read_feature_store(
    path: str | Path,
    expected_source: str | None = None,
    strict: bool = False,
) -> tuple[list[SegmentSequence], dict]:
    """Load sequences back; strict mode pins the producing checkpoint."""
    path = Path(path)
    header, data = _read_container(path)
    if header.get("kind") != "features":
        raise StoreError(f"{path}: not a feature store")
    if strict and expected_source is not None and header["source_checkpoint"] != expected_source:
        raise StoreError(
            f"{path}: features came from checkpoint {header['source_checkpoint'][:12]}..., "
            f"expected {expected_source[:12]}..."
        )
    width = header["width"]
    sequences = []
    for doc in header["docs"]:
        count = doc["num_segments"] * width
        start = doc["offset"]
        block = data[start : start + count * 4]
        if len(block) != count * 4:
            raise StoreError(f"{path}: document '{doc['id']}' truncated")
        features = np.frombuffer(block, dtype="<f4").reshape(doc["num_segments"], width).copy()
        sequences.append(
            SegmentSequence(
                doc_id=doc["id"],
                features=features,
                label=doc["label"],
                source_kind=header["repr"],
                source_hash=header["source_checkpoint"],
                doc_length=doc.get("doc_length", 0),
            )
        )
    return sequences, header
