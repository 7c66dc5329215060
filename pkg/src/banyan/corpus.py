"""Corpus ingestion, vocabulary and deterministic batching."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

UNK = "<unk>"
UNK_ID = 0
DEFAULT_MAX_LEN = 128
DEFAULT_BATCH_SIZE = 512


class CorpusError(ValueError):
    pass


@dataclass
class Vocabulary:
    itos: list[str]
    stoi: dict[str, int] = field(init=False)

    def __post_init__(self):
        if not self.itos or self.itos[0] != UNK:
            raise CorpusError(f"vocabulary must start with {UNK!r}")
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise CorpusError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def size(self) -> int:
        return len(self.itos)

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi and token != UNK

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for i, tok in enumerate(self.itos):
                f.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        itos = []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f):
                line = line.rstrip("\n")
                if not line:
                    continue
                tok, _, idx = line.rpartition("\t")
                if not _ or int(idx) != len(itos):
                    raise CorpusError(f"{path}:{lineno + 1}: ids must be dense and sorted")
                itos.append(tok)
        return cls(itos)


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.ids) == 0:
            raise CorpusError("empty sequence")

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class Batch:
    sequences: list[TokenSequence]
    index: int = 0
    seed: int = 0

    def __post_init__(self):
        if not self.sequences:
            raise CorpusError("batch must contain at least one sequence")

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def n_tokens(self) -> int:
        return sum(len(s) for s in self.sequences)

    @classmethod
    def of(cls, seqs: Iterable[Sequence[int]], index: int = 0, seed: int = 0) -> "Batch":
        return cls([TokenSequence(tuple(int(i) for i in s)) for s in seqs], index, seed)


def read_lines(path: str | Path) -> list[str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise CorpusError(f"cannot read corpus {path}: {e}") from e
    return [line for line in text.splitlines() if line.strip()]


def build_vocab(corpus_path: str | Path, min_count: int = 1) -> Vocabulary:
    """Assign ids by descending frequency, ties broken lexicographically."""
    return vocab_from_lines(read_lines(corpus_path), min_count)


def vocab_from_lines(lines: Iterable[str], min_count: int = 1) -> Vocabulary:
    counts = Counter(tok for line in lines for tok in line.split())
    if not counts:
        raise CorpusError("empty corpus")
    counts.pop(UNK, None)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary([UNK] + kept)


def tokenize(line: str, vocab: Vocabulary, max_len: int | None = DEFAULT_MAX_LEN) -> TokenSequence:
    toks = line.split()
    if not toks:
        raise CorpusError("empty sequence")
    if max_len is not None:
        toks = toks[:max_len]
    return TokenSequence(tuple(vocab.id(t) for t in toks))


def load_corpus(path: str | Path, vocab: Vocabulary, max_len: int | None = DEFAULT_MAX_LEN) -> list[TokenSequence]:
    lines = read_lines(path)
    if not lines:
        raise CorpusError(f"empty corpus: {path}")
    return [tokenize(line, vocab, max_len) for line in lines]


def load_id_corpus(path: str | Path, vocab_size: int, max_len: int | None = DEFAULT_MAX_LEN) -> list[TokenSequence]:
    """Read a pre-tokenized corpus of space-separated decimal ids."""
    seqs = []
    for lineno, line in enumerate(read_lines(path)):
        try:
            ids = [int(t) for t in line.split()]
        except ValueError as e:
            raise CorpusError(f"{path}:{lineno + 1}: non-integer id") from e
        if any(i < 0 or i >= vocab_size for i in ids):
            raise CorpusError(f"{path}:{lineno + 1}: id out of range [0, {vocab_size})")
        seqs.append(TokenSequence(tuple(ids[:max_len] if max_len else ids)))
    if not seqs:
        raise CorpusError(f"empty corpus: {path}")
    return seqs


def iter_batches(
    sequences: Sequence[TokenSequence],
    batch_size: int = DEFAULT_BATCH_SIZE,
    seed: int = 0,
    epoch: int = 0,
    shuffle: bool = True,
) -> Iterator[Batch]:
    """Yield batches in a seeded order; the final batch may be partial."""
    if not sequences:
        raise CorpusError("empty corpus")
    if batch_size < 1:
        raise CorpusError("batch_size must be >= 1")
    order = np.arange(len(sequences))
    if shuffle:
        np.random.default_rng([seed, epoch]).shuffle(order)
    for b, start in enumerate(range(0, len(order), batch_size)):
        idx = order[start:start + batch_size]
        yield Batch([sequences[i] for i in idx], index=b, seed=seed)


def next_batch(batches: Iterator[Batch]) -> Batch | None:
    """Pull one batch; None signals exhaustion."""
    return next(batches, None)
