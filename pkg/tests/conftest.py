import numpy as np
import pytest

from banyan.corpus import Batch, vocab_from_lines, tokenize
from banyan.model import init_params
from banyan.structure import argmax_adjacent
from banyan.training import loss_and_grads
from banyan.synthetic import toy_sentences


def angle_vec(deg):
    r = np.deg2rad(deg)
    return np.array([[np.cos(r), np.sin(r)]])


def angle_compose(a, b):
    s = a + b
    return s / np.linalg.norm(s)


class AngleEmbedder:
    """Tokens as unit vectors at fixed angles; merges follow angular distance."""

    def __init__(self, angles):
        self.angles = angles
        self.compose_calls = 0

    def embed(self, tok):
        return angle_vec(self.angles[tok])

    def compose(self, a, b):
        self.compose_calls += 1
        return angle_compose(a, b)


def reference_induce(batch, embed_fn, compose_fn):
    """Literal list-based entangled compose, used as an oracle.

    Returns (signatures in creation order, children by signature,
    context counts keyed by (child_sig, parent_sig, side)).
    """
    sigs, children, emb = [], {}, {}
    frontier = []
    for seq in batch.sequences:
        row = []
        for t in seq.ids:
            s = (t,)
            if s not in emb:
                sigs.append(s)
                emb[s] = embed_fn(t)
            row.append(s)
        frontier.append(row)
    contexts = {}
    while any(len(r) > 1 for r in frontier):
        s_i, i = argmax_adjacent([[emb[s] for s in row] for row in frontier])
        a, b = frontier[s_i][i], frontier[s_i][i + 1]
        joint = a + b
        if joint not in emb:
            sigs.append(joint)
            children[joint] = (a, b)
            emb[joint] = compose_fn(emb[a], emb[b])
        for r, row in enumerate(frontier):
            out, j = [], 0
            while j < len(row):
                if j + 1 < len(row) and row[j] == a and row[j + 1] == b:
                    out.append(joint)
                    contexts[(a, joint, 0)] = contexts.get((a, joint, 0), 0) + 1
                    contexts[(b, joint, 1)] = contexts.get((b, joint, 1), 0) + 1
                    j += 2
                else:
                    out.append(row[j])
                    j += 1
            frontier[r] = out
    return sigs, children, contexts


STENCIL = ((2, -1.0), (1, 8.0), (-1, -8.0), (-2, 1.0))


def finite_difference(graph, params, masks, objective, h=1e-3, tau=0.2):
    """Fourth-order central differences of the loss, one scalar at a time."""
    grads = params.zeros_like()
    for name, arr in params.named():
        flat = arr.reshape(-1)
        out = grads[name].reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            acc = 0.0
            for k, c in STENCIL:
                flat[i] = keep + k * h
                acc += c * loss_and_grads(graph, params, masks, objective, tau, with_grad=False).loss
            flat[i] = keep
            out[i] = acc / (12 * h)
    return grads


def max_relative_error(analytic, numeric):
    """Worst per-tensor error, scaled by the tensor's largest gradient entry."""
    worst = 0.0
    for (_, a), (_, n) in zip(analytic.named(), numeric.named()):
        scale = max(np.abs(a).max(), np.abs(n).max(), 1e-8)
        worst = max(worst, float(np.abs(a - n).max() / scale))
    return worst


@pytest.fixture
def toy_lines():
    return toy_sentences(200, seed=0)


@pytest.fixture
def toy_corpus(toy_lines):
    vocab = vocab_from_lines(toy_lines)
    return [tokenize(line, vocab) for line in toy_lines], vocab


@pytest.fixture
def small_params():
    def make(mode="diag", V=12, U=2, K=3, seed=0, dtype=np.float64, scale=0.5):
        p = init_params(V, U, K, mode, 0.5, seed=seed, dtype=dtype)
        rng = np.random.default_rng(seed + 100)
        for k, v in p.fn.items():
            p.fn[k] = (rng.normal(size=v.shape) * scale).astype(dtype)
        return p
    return make


def batch_of(*rows):
    return Batch.of(rows)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
