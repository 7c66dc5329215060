"""Zero-shot word and sentence similarity scored by Spearman correlation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .corpus import UNK_ID, Batch, CorpusError, Vocabulary
from .model import Parameters, compose, embed, upward_pass
from .structure import cosine_flat, induce_sentential

log = logging.getLogger(__name__)


@dataclass
class SimilarityDataset:
    pairs: list[tuple[str, str, float]]
    level: str = "sentence"
    name: str = "dataset"

    def __post_init__(self):
        if self.level not in ("word", "sentence"):
            raise ValueError("level must be word or sentence")
        if len(self.pairs) < 2:
            raise ValueError("a similarity dataset needs at least 2 pairs")
        if len({p[2] for p in self.pairs}) < 2:
            raise ValueError("gold scores are all equal; Spearman is undefined")

    @classmethod
    def load(cls, path: str | Path, level: str = "sentence", name: str | None = None) -> "SimilarityDataset":
        pairs = []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                cols = line.split("\t")
                if len(cols) != 3:
                    raise CorpusError(f"{path}:{lineno}: expected text_a<TAB>text_b<TAB>score")
                try:
                    score = float(cols[2])
                except ValueError as e:
                    raise CorpusError(f"{path}:{lineno}: bad score {cols[2]!r}") from e
                pairs.append((cols[0], cols[1], score))
        return cls(pairs, level, name or Path(path).stem)


def spearman(xs, ys) -> float:
    """Spearman rank correlation with average ranks for ties."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1 or len(xs) < 2:
        raise ValueError("spearman needs two equal-length lists of at least 2 values")
    rx = rankdata(xs) - (len(xs) + 1) / 2
    ry = rankdata(ys) - (len(ys) + 1) / 2
    den = np.sqrt((rx @ rx) * (ry @ ry))
    if den == 0:
        raise ValueError("zero variance in ranks")
    return float(np.clip((rx @ ry) / den, -1.0, 1.0))


def encode_word(params: Parameters, vocab: Vocabulary, token: str) -> tuple[np.ndarray, bool]:
    """Leaf embedding of ``token``; the flag is True when it fell back to unknown."""
    tid = vocab.id(token)
    oov = token not in vocab
    if oov:
        log.warning("out-of-vocabulary token %r mapped to unknown", token)
    return embed(params, tid), oov


def encode_sentence(params: Parameters, ids, pool: str = "root") -> np.ndarray:
    """Root up embedding of a sentence induced on its own.

    ``pool="mean-nodes"`` instead averages the up embeddings of every node.
    """
    ids = [int(i) for i in ids]
    if not ids:
        raise ValueError("empty sentence")
    graph = induce_sentential(Batch.of([ids]), lambda t: embed(params, t),
                              lambda a, b: compose(params, a, b))
    up = upward_pass(graph, params)
    if pool == "root":
        return up[graph.sentence_roots[0]]
    if pool == "mean-nodes":
        return up.astype(np.float64).mean(axis=0).astype(up.dtype)
    raise ValueError(f"unknown pooling {pool!r}")


def _sentence_ids(vocab: Vocabulary, text: str, max_len: int | None) -> tuple[list[int], int]:
    toks = text.split()
    if max_len is not None:
        toks = toks[:max_len]
    ids = [vocab.id(t) for t in toks]
    return ids, sum(1 for i in ids if i == UNK_ID)


def model_scores(params: Parameters, vocab: Vocabulary, dataset: SimilarityDataset,
                 pool: str = "root", max_len: int | None = 128) -> tuple[list[float], int]:
    scores, oov = [], 0
    cache: dict[str, np.ndarray] = {}
    for a, b, _ in dataset.pairs:
        vecs = []
        for text in (a, b):
            if text not in cache:
                if dataset.level == "word":
                    vec, miss = encode_word(params, vocab, text.strip())
                    oov += int(miss)
                else:
                    ids, miss = _sentence_ids(vocab, text, max_len)
                    if not ids:
                        raise ValueError(f"empty sentence in {dataset.name}")
                    oov += miss
                    vec = encode_sentence(params, ids, pool)
                cache[text] = vec
            vecs.append(cache[text])
        scores.append(cosine_flat(vecs[0], vecs[1]))
    return scores, oov


def evaluate(params: Parameters, vocab: Vocabulary, dataset: SimilarityDataset, pool: str = "root") -> dict:
    """Spearman x 100 between model cosine similarities and gold scores."""
    scores, oov = model_scores(params, vocab, dataset, pool)
    rho = spearman(scores, [p[2] for p in dataset.pairs])
    return {"dataset": dataset.name, "spearman_x100": 100.0 * rho, "pairs": len(dataset.pairs), "oov": oov}
