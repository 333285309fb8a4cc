"""Dataset ingestion for the three-file (``seq.in`` / ``seq.out`` / ``label``) layout.

Also builds vocabularies and label maps, loads text-format word vectors and
encodes utterances into fixed-length, right-padded id arrays.
"""

from __future__ import annotations

import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    EmptySequenceError,
    FormatError,
    LabelError,
    LayoutError,
    VocabularyError,
)
from .tensor import IGNORE_INDEX

logger = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1
SPLIT_FILES = ("seq.in", "seq.out", "label")
SPLIT_DIRS = {"train": ("train",), "dev": ("dev", "valid", "validation"), "test": ("test",)}


@dataclass
class RawExample:
    tokens: list[str]
    slot_tags: list[str]
    intent: str

    def __post_init__(self):
        if not self.tokens:
            raise EmptySequenceError("utterance has no tokens")
        if len(self.tokens) != len(self.slot_tags):
            raise FormatError(f"{len(self.tokens)} tokens but {len(self.slot_tags)} slot tags")


class Vocabulary:
    """Token to id map with PAD=0 and UNK=1 always reserved."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = [PAD, UNK]
        self.stoi: dict[str, int] = {PAD: PAD_ID, UNK: UNK_ID}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __getitem__(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    @classmethod
    def from_list(cls, itos: Sequence[str]) -> "Vocabulary":
        if list(itos[:2]) != [PAD, UNK]:
            raise FormatError("vocabulary must start with the PAD and UNK entries")
        return cls(itos[2:])


@dataclass
class LabelMaps:
    intents: list[str]
    slots: list[str]
    ignore_id: int = IGNORE_INDEX

    def __post_init__(self):
        self._intent_ids = {s: i for i, s in enumerate(self.intents)}
        self._slot_ids = {s: i for i, s in enumerate(self.slots)}

    @property
    def num_intents(self) -> int:
        return len(self.intents)

    @property
    def num_slots(self) -> int:
        return len(self.slots)

    def intent_id(self, label: str) -> int:
        try:
            return self._intent_ids[label]
        except KeyError:
            raise LabelError(f"unknown intent label {label!r}") from None

    def slot_id(self, tag: str) -> int:
        try:
            return self._slot_ids[tag]
        except KeyError:
            raise LabelError(f"unknown slot tag {tag!r}") from None

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelMaps) and self.intents == other.intents and self.slots == other.slots


@dataclass
class EncodedExample:
    token_ids: np.ndarray
    valid_len: int
    slot_ids: np.ndarray
    intent_id: int
    truncated: bool = False


@dataclass
class EncodedSplit:
    """A split stacked into arrays: ``token_ids``/``slot_ids`` are ``[N, max_seq_len]``."""

    token_ids: np.ndarray
    valid_len: np.ndarray
    slot_ids: np.ndarray
    intent_ids: np.ndarray
    truncated: int = 0

    def __len__(self) -> int:
        return len(self.valid_len)

    @property
    def max_seq_len(self) -> int:
        return self.token_ids.shape[1]

    def subset(self, idx) -> "EncodedSplit":
        idx = np.asarray(idx, dtype=np.int64)
        return EncodedSplit(self.token_ids[idx], self.valid_len[idx], self.slot_ids[idx], self.intent_ids[idx])

    def batches(self, batch_size: int, order=None) -> Iterator["EncodedSplit"]:
        order = np.arange(len(self)) if order is None else np.asarray(order)
        for start in range(0, len(order), batch_size):
            yield self.subset(order[start:start + batch_size])

    def example(self, i: int) -> EncodedExample:
        return EncodedExample(self.token_ids[i], int(self.valid_len[i]), self.slot_ids[i], int(self.intent_ids[i]))


@dataclass
class Coverage:
    covered: int
    uncovered: int
    uncovered_tokens: list[str] = field(default_factory=list)

    @property
    def ratio(self) -> float:
        total = self.covered + self.uncovered
        return self.covered / total if total else 0.0


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def _read_lines(path: Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n").rstrip("\r") for line in fh]


def load_split(directory) -> list[RawExample]:
    """Parse one split directory holding line-aligned ``seq.in``, ``seq.out`` and ``label``."""
    directory = Path(directory)
    missing = [f for f in SPLIT_FILES if not (directory / f).is_file()]
    if missing:
        raise LayoutError(f"{directory} lacks {', '.join(missing)}")
    seq_in, seq_out, labels = (_read_lines(directory / f) for f in SPLIT_FILES)
    if not (len(seq_in) == len(seq_out) == len(labels)):
        n = min(len(seq_in), len(seq_out), len(labels)) + 1
        raise FormatError(
            f"line counts differ (seq.in={len(seq_in)}, seq.out={len(seq_out)}, label={len(labels)})",
            directory, n)
    examples = []
    for i, (words, tags, intent) in enumerate(zip(seq_in, seq_out, labels), start=1):
        tokens, slot_tags = words.split(), tags.split()
        if len(tokens) != len(slot_tags):
            raise FormatError(f"{len(tokens)} tokens but {len(slot_tags)} tags", directory / "seq.out", i)
        if not tokens:
            raise FormatError("empty utterance", directory / "seq.in", i)
        intent = intent.strip()
        if not intent:
            raise FormatError("empty intent label", directory / "label", i)
        examples.append(RawExample(tokens, slot_tags, intent))
    return examples


def resolve_split_dirs(root) -> dict[str, Path]:
    root = Path(root)
    if not root.is_dir():
        raise LayoutError(f"dataset root {root} is not a directory")
    found = {}
    for split, names in SPLIT_DIRS.items():
        for name in names:
            if (root / name).is_dir():
                found[split] = root / name
                break
        else:
            raise LayoutError(f"{root} has no {split} split directory (looked for {', '.join(names)})")
    return found


def load_dataset(root) -> dict[str, list[RawExample]]:
    """Load ``train``/``dev``/``test`` splits from ``root``."""
    return {split: load_split(path) for split, path in resolve_split_dirs(root).items()}


def dataset_checksum(root) -> str:
    """sha256 over every split file, in a fixed order."""
    h = hashlib.sha256()
    for split, path in sorted(resolve_split_dirs(root).items()):
        for name in SPLIT_FILES:
            h.update(f"{split}/{name}\0".encode())
            h.update((path / name).read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# vocabulary, labels, vectors
# ---------------------------------------------------------------------------


def build_vocab(train: Sequence[RawExample], min_count: int = 1) -> Vocabulary:
    """Vocabulary from training tokens seen at least ``min_count`` times, in first-seen order."""
    if not train:
        raise DataError("cannot build a vocabulary from an empty split")
    counts = Counter(tok for ex in train for tok in ex.tokens)
    order = dict.fromkeys(tok for ex in train for tok in ex.tokens)
    return Vocabulary(tok for tok in order if counts[tok] >= min_count)


def build_label_maps(*splits: Sequence[RawExample]) -> LabelMaps:
    intents = sorted({ex.intent for split in splits for ex in split})
    slots = sorted({tag for split in splits for ex in split for tag in ex.slot_tags})
    if "O" in slots:
        slots.remove("O")
        slots.insert(0, "O")
    return LabelMaps(intents, slots)


def load_word_vectors(path, vocab: Vocabulary, dim: int, seed: int = 0, scale: float = 0.1):
    """Embedding matrix for ``vocab`` from a whitespace-separated text vector file.

    Returns ``(matrix, Coverage)``. Tokens missing from the file (and UNK) keep
    a seeded ``normal(0, scale)`` row; the PAD row is zero. ``path=None`` gives
    a fully random matrix.
    """
    if dim < 1:
        raise ConfigError(f"embedding dimension must be positive, got {dim}")
    rng = np.random.default_rng(seed)
    matrix = rng.normal(0.0, scale, size=(len(vocab), dim)).astype(np.float32)
    matrix[PAD_ID] = 0.0
    seen = np.zeros(len(vocab), dtype=bool)
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.rstrip("\n").split(" ")
                parts = [p for p in parts if p] if len(parts) != dim + 1 else parts
                if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                    if int(parts[1]) != dim:
                        raise ConfigError(f"{path}: vectors have d={parts[1]}, expected {dim}")
                    continue
                if len(parts) != dim + 1:
                    if lineno == 1 and len(parts) > 1:
                        raise ConfigError(f"{path}: vectors have d={len(parts) - 1}, expected {dim}")
                    raise FormatError(f"expected token plus {dim} values, got {len(parts)} fields", path, lineno)
                idx = vocab.stoi.get(parts[0])
                if idx is None or idx == PAD_ID or seen[idx]:
                    continue
                try:
                    matrix[idx] = np.array(parts[1:], dtype=np.float32)
                except ValueError:
                    raise FormatError("non-numeric vector component", path, lineno) from None
                seen[idx] = True
    ordinary = np.arange(len(vocab)) >= 2
    uncovered = [vocab.itos[i] for i in np.flatnonzero(ordinary & ~seen)]
    report = Coverage(int((ordinary & seen).sum()), len(uncovered), uncovered)
    logger.info("word vectors cover %d/%d tokens", report.covered, report.covered + report.uncovered)
    return matrix, report


# ---------------------------------------------------------------------------
# encoding
# ---------------------------------------------------------------------------


def encode(raw: RawExample, vocab: Vocabulary, labels: LabelMaps, max_seq_len: int) -> EncodedExample:
    """Ids for one utterance, right-padded (or truncated) to ``max_seq_len``."""
    if max_seq_len < 1:
        raise ConfigError("max_seq_len must be at least 1")
    n = min(len(raw.tokens), max_seq_len)
    token_ids = np.full(max_seq_len, PAD_ID, dtype=np.int64)
    slot_ids = np.full(max_seq_len, labels.ignore_id, dtype=np.int64)
    token_ids[:n] = [vocab[t] for t in raw.tokens[:n]]
    slot_ids[:n] = [labels.slot_id(t) for t in raw.slot_tags[:n]]
    return EncodedExample(token_ids, n, slot_ids, labels.intent_id(raw.intent), len(raw.tokens) > max_seq_len)


def encode_split(examples: Sequence[RawExample], vocab: Vocabulary, labels: LabelMaps,
                 max_seq_len: int) -> EncodedSplit:
    if not examples:
        raise DataError("cannot encode an empty split")
    enc = [encode(ex, vocab, labels, max_seq_len) for ex in examples]
    truncated = sum(e.truncated for e in enc)
    if truncated:
        logger.warning("truncated %d utterances to %d tokens", truncated, max_seq_len)
    return EncodedSplit(
        np.stack([e.token_ids for e in enc]),
        np.array([e.valid_len for e in enc], dtype=np.int64),
        np.stack([e.slot_ids for e in enc]),
        np.array([e.intent_id for e in enc], dtype=np.int64),
        truncated,
    )


def decode(example: EncodedExample, vocab: Vocabulary, labels: LabelMaps) -> tuple[list[str], list[str], str]:
    n = example.valid_len
    tokens = [vocab.itos[i] for i in example.token_ids[:n]]
    tags = [labels.slots[i] for i in example.slot_ids[:n]]
    return tokens, tags, labels.intents[example.intent_id]


def check_token_ids(token_ids: np.ndarray, vocab_size: int) -> None:
    if token_ids.size == 0:
        raise EmptySequenceError("empty token sequence")
    if token_ids.min() < 0 or token_ids.max() >= vocab_size:
        bad = int(token_ids.max() if token_ids.max() >= vocab_size else token_ids.min())
        raise VocabularyError(f"token id {bad} outside vocabulary of size {vocab_size}")
