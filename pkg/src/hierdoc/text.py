"""Vocabulary, dataset ingestion, and corpus statistics.

The single ingestion format is JSONL: one object per line with ``id``,
``text``, ``label``, and ``split`` fields. Tokenization is lowercased
whitespace splitting; anything fancier belongs in preprocessing scripts.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
SEP_ID = 3
SPECIAL_TOKENS = ("<pad>", "<unk>", "<cls>", "<sep>")

SPLITS = ("train", "valid", "test")


class DatasetError(ValueError):
    """Malformed dataset input; the message carries the offending line."""


def tokenize(text: str) -> list[str]:
    return text.lower().split()


@dataclass
class Vocabulary:
    """Dense token-to-id map with the four specials pinned at ids 0..3."""

    token_to_id: dict[str, int]
    id_to_token: list[str] = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(tok, UNK_ID) for tok in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def to_list(self) -> list[str]:
        return list(self.id_to_token)

    @classmethod
    def from_list(cls, tokens: list[str]) -> "Vocabulary":
        if tuple(tokens[:4]) != SPECIAL_TOKENS:
            raise DatasetError("vocabulary list must start with the special tokens")
        return cls({tok: i for i, tok in enumerate(tokens)}, list(tokens))


@dataclass
class Document:
    id: str
    token_ids: list[int]
    label: int
    split: str
    length: int = 0

    def __post_init__(self):
        if not self.token_ids:
            raise DatasetError(f"document {self.id} has no tokens")
        if self.length == 0:
            self.length = len(self.token_ids)


@dataclass
class RawDocument:
    """A parsed JSONL record before vocabulary encoding."""

    id: str
    tokens: list[str]
    label: int
    split: str


@dataclass
class CorpusStats:
    """Table-style corpus summary plus the cumulative length distribution."""

    num_classes: int
    num_documents: int
    average_words: float
    longest: int
    length_cdf: list[tuple[int, float]]


def build_vocab(corpus: Iterable[Sequence[str]], max_size: int) -> Vocabulary:
    """Keep the most frequent tokens, ties broken lexicographically.

    ``max_size`` bounds the total size including the four specials.
    """
    counts: Counter[str] = Counter()
    empty = True
    for tokens in corpus:
        empty = False
        counts.update(tokens)
    if empty:
        raise DatasetError("cannot build a vocabulary from an empty corpus")
    if max_size <= len(SPECIAL_TOKENS):
        raise DatasetError(f"max_size must exceed {len(SPECIAL_TOKENS)} specials")
    budget = max_size - len(SPECIAL_TOKENS)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:budget]
    id_to_token = list(SPECIAL_TOKENS) + [tok for tok, _ in ranked]
    return Vocabulary({tok: i for i, tok in enumerate(id_to_token)}, id_to_token)


def _parse_line(line: str, lineno: int) -> RawDocument:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
    for key in ("id", "text", "label", "split"):
        if key not in obj:
            raise DatasetError(f"line {lineno}: missing field '{key}'")
    if obj["split"] not in SPLITS:
        raise DatasetError(f"line {lineno}: unknown split tag '{obj['split']}'")
    tokens = tokenize(str(obj["text"]))
    if not tokens:
        raise DatasetError(f"line {lineno}: empty text")
    return RawDocument(str(obj["id"]), tokens, obj["label"], obj["split"])


def _map_labels(records: list[RawDocument]) -> tuple[list[int], dict[str, int]]:
    raw = [r.label for r in records]
    if all(isinstance(v, int) and not isinstance(v, bool) for v in raw):
        uniq = sorted(set(raw))
        if uniq != list(range(len(uniq))):
            raise DatasetError(f"integer labels must form a contiguous 0..C-1 set, got {uniq}")
        return [int(v) for v in raw], {str(v): v for v in uniq}
    label_map = {name: i for i, name in enumerate(sorted({str(v) for v in raw}))}
    return [label_map[str(v)] for v in raw], label_map


def compute_stats(lengths: Sequence[int], num_classes: int) -> CorpusStats:
    ordered = sorted(lengths)
    n = len(ordered)
    cdf: list[tuple[int, float]] = []
    seen = 0
    for i, length in enumerate(ordered):
        seen += 1
        if i + 1 == n or ordered[i + 1] != length:
            cdf.append((length, seen / n))
    return CorpusStats(
        num_classes=num_classes,
        num_documents=n,
        average_words=sum(ordered) / n,
        longest=ordered[-1],
        length_cdf=cdf,
    )


def build_documents(
    records: list[RawDocument], vocab: Vocabulary | None = None, max_vocab: int = 53160
) -> tuple[list[Document], Vocabulary, CorpusStats, dict[str, int]]:
    """Encode parsed records into documents plus vocabulary and statistics.

    When ``vocab`` is None a new vocabulary is built from the train split
    (capped at ``max_vocab``); statistics cover all splits.
    """
    if not records:
        raise DatasetError("no documents")
    labels, label_map = _map_labels(records)
    if vocab is None:
        train_tokens = (r.tokens for r in records if r.split == "train")
        vocab = build_vocab(train_tokens, max_size=max_vocab)
    docs = [
        Document(id=r.id, token_ids=vocab.encode(r.tokens), label=labels[i], split=r.split)
        for i, r in enumerate(records)
    ]
    stats = compute_stats([len(r.tokens) for r in records], num_classes=len(label_map))
    return docs, vocab, stats, label_map


def records_from_rows(rows: list[dict]) -> list[RawDocument]:
    """Validate in-memory JSONL-shaped rows (id, text, label, split)."""
    return [_parse_line(json.dumps(row), i + 1) for i, row in enumerate(rows)]


def load_dataset(
    path: str | Path, vocab: Vocabulary | None = None, max_vocab: int = 53160
) -> tuple[list[Document], Vocabulary, CorpusStats, dict[str, int]]:
    """Read a JSONL corpus; returns documents in file order, the vocabulary,
    the stats over all splits, and the label map."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    records: list[RawDocument] = []
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if line.strip():
                records.append(_parse_line(line, lineno))
    if not records:
        raise DatasetError(f"{path}: no documents")
    return build_documents(records, vocab=vocab, max_vocab=max_vocab)


def split_documents(docs: Sequence[Document]) -> dict[str, list[Document]]:
    out: dict[str, list[Document]] = {name: [] for name in SPLITS}
    for doc in docs:
        out[doc.split].append(doc)
    return out


def export_stats(stats: CorpusStats, out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``stats.csv`` (C, N, AW, L) and ``length_cdf.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stats_path = out_dir / "stats.csv"
    with stats_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["C", "N", "AW", "L"])
        writer.writerow(
            [stats.num_classes, stats.num_documents, repr(stats.average_words), stats.longest]
        )
    cdf_path = out_dir / "length_cdf.csv"
    with cdf_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["length", "fraction"])
        for length, fraction in stats.length_cdf:
            writer.writerow([length, repr(fraction)])
    return stats_path, cdf_path


def read_length_cdf(path: str | Path) -> list[tuple[int, float]]:
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        next(reader)
        return [(int(row[0]), float(row[1])) for row in reader]
