"""Seeded synthetic corpora for smoke runs, tests and node-growth benchmarks."""

from __future__ import annotations

import numpy as np

_DET = ["the", "a", "every", "some"]
_ADJ = ["small", "old", "red", "quiet", "bright", "cold", "sweet", "endless"]
_NOUN = ["cat", "dog", "bird", "night", "child", "river", "house", "tree", "song", "light"]
_VERB = ["sees", "finds", "likes", "follows", "hears", "wants", "makes", "keeps"]
_PREP = ["in", "near", "under", "after"]
_ADV = ["again", "slowly", "today", "often"]
_PHRASES = ["some are born to", "in the morning", "at the end of the day", "once upon a time"]


def toy_sentences(n: int = 200, seed: int = 0) -> list[str]:
    """Templated sentences over a ~50-word vocabulary with heavy n-gram reuse."""
    rng = np.random.default_rng(seed)
    pick = lambda xs: xs[rng.integers(len(xs))]

    def np_():
        if rng.random() < 0.5:
            return f"{pick(_DET)} {pick(_NOUN)}"
        return f"{pick(_DET)} {pick(_ADJ)} {pick(_NOUN)}"

    templates = [
        lambda: f"{np_()} {pick(_VERB)} {np_()}",
        lambda: f"{np_()} {pick(_VERB)} {np_()} {pick(_PREP)} {np_()}",
        lambda: f"{pick(_PHRASES)} {pick(_ADJ)} {pick(_NOUN)}",
        lambda: f"{np_()} {pick(_VERB)} {pick(_ADV)}",
        lambda: f"{pick(_PHRASES)} {np_()} {pick(_VERB)} {np_()}",
    ]
    return [templates[rng.integers(len(templates))]() for _ in range(n)]


def natural_like_sentences(n: int = 10_000, seed: int = 0, vocab_size: int = 8000,
                           zipf_a: float = 1.1) -> list[str]:
    """Sentences from a small phrase grammar over a Zipf-distributed lexicon.

    Word classes draw from disjoint Zipfian pools and a share of noun
    phrases are recurring multi-word expressions, which gives the repeated
    spans and long-tailed unigram counts of running text.
    """
    rng = np.random.default_rng(seed)
    sizes = {"DET": 12, "PREP": 30, "ADJ": vocab_size // 6, "VERB": vocab_size // 4}
    sizes["NOUN"] = vocab_size - sum(sizes.values())
    pools = {}
    for cls, size in sizes.items():
        ranks = np.arange(1, size + 1, dtype=np.float64)
        cdf = np.cumsum(ranks ** -zipf_a)
        pools[cls] = ([f"{cls.lower()}{i}" for i in range(size)], cdf / cdf[-1])

    def word(cls):
        words, cdf = pools[cls]
        return words[min(int(np.searchsorted(cdf, rng.random(), side="right")), len(words) - 1)]

    mwes = [[word("DET"), word("ADJ"), word("NOUN")] for _ in range(200)]
    mwe_p = np.arange(1, len(mwes) + 1, dtype=np.float64) ** -1.0
    mwe_p /= mwe_p.sum()

    def noun_phrase(depth=0):
        if rng.random() < 0.2:
            return list(mwes[rng.choice(len(mwes), p=mwe_p)])
        out = [word("DET")]
        out += [word("ADJ") for _ in range(rng.integers(0, 3))]
        out.append(word("NOUN"))
        if depth < 2 and rng.random() < 0.3:
            out += [word("PREP")] + noun_phrase(depth + 1)
        return out

    sentences = []
    for _ in range(n):
        s = noun_phrase() + [word("VERB")]
        if rng.random() < 0.7:
            s += noun_phrase()
        if rng.random() < 0.4:
            s += [word("PREP")] + noun_phrase()
        sentences.append(" ".join(s))
    return sentences
