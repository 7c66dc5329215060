"""Token reconstruction and up/down contrastive losses, with gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from .model import Parameters, dembed
from .structure import EntangledGraph

DEFAULT_TAU = 0.2


def tempered_softmax(row: np.ndarray, tau: float = DEFAULT_TAU, axis: int = -1) -> np.ndarray:
    if tau <= 0:
        raise ValueError("temperature must be > 0")
    return softmax(np.asarray(row, dtype=np.float64) / tau, axis=axis)


@dataclass
class CEResult:
    loss: float
    accuracy: float
    grad_down: np.ndarray | None = None   # [M, K, U], nonzero on leaves only
    grad_gamma: np.ndarray | None = None


def cross_entropy_loss(graph: EntangledGraph, down: np.ndarray, params: Parameters,
                       weighting: str = "unique", with_grad: bool = False) -> CEResult:
    """Mean negative log-likelihood of every leaf's token under its down embedding.

    ``weighting="unique"`` averages over distinct leaf nodes;
    ``"occurrence"`` weights each leaf by how often it occurs in the batch.
    """
    leaves = graph.leaves
    targets = graph.token[leaves]
    x = down[leaves].reshape(len(leaves), params.D).astype(np.float64)
    gamma = params.gamma.astype(np.float64)
    logits = x @ gamma
    logp = log_softmax(logits, axis=1)
    if weighting == "unique":
        w = np.ones(len(leaves))
    elif weighting == "occurrence":
        w = graph.leaf_weight.astype(np.float64)
    else:
        raise ValueError(f"unknown CE weighting {weighting!r}")
    w = w / w.sum()
    nll = -logp[np.arange(len(leaves)), targets]
    loss = float(w @ nll)
    acc = float(np.mean(np.argmax(logits, axis=1) == targets))
    res = CEResult(loss, acc)
    if with_grad:
        g_logits = np.exp(logp)
        g_logits[np.arange(len(leaves)), targets] -= 1.0
        g_logits *= w[:, None]
        res.grad_gamma = x.T @ g_logits
        g_down = np.zeros(down.shape, dtype=np.float64)
        g_down[leaves] = (g_logits @ gamma.T).reshape(len(leaves), params.K, params.U)
        res.grad_down = g_down
    return res


def leaf_logits(graph: EntangledGraph, down: np.ndarray, params: Parameters) -> np.ndarray:
    return dembed(params, down[graph.leaves])


def _normalise(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norm = np.sqrt(np.einsum("ij,ij->i", x, x))
    safe = np.where(norm > 0, norm, 1.0)
    return x / safe[:, None] * (norm > 0)[:, None], norm


def _normalise_vjp(xhat: np.ndarray, norm: np.ndarray, g: np.ndarray) -> np.ndarray:
    safe = np.where(norm > 0, norm, 1.0)
    proj = np.einsum("ij,ij->i", xhat, g)
    return (g - xhat * proj[:, None]) / safe[:, None] * (norm > 0)[:, None]


def similarity_matrix(up: np.ndarray, down: np.ndarray) -> np.ndarray:
    """A[i, j] = cosine(up_i, down_j) over flattened embeddings."""
    M = up.shape[0]
    u, _ = _normalise(up.reshape(M, -1).astype(np.float64))
    d, _ = _normalise(down.reshape(M, -1).astype(np.float64))
    return np.clip(u @ d.T, -1.0, 1.0)


@dataclass
class ContrastiveResult:
    loss: float
    grad_up: np.ndarray | None = None
    grad_down: np.ndarray | None = None


def contrastive_loss(up: np.ndarray, down: np.ndarray, tau: float = DEFAULT_TAU,
                     with_grad: bool = False) -> ContrastiveResult:
    """Symmetric InfoNCE pairing each node's up embedding with its own down embedding."""
    if tau <= 0:
        raise ValueError("temperature must be > 0")
    M = up.shape[0]
    u, nu = _normalise(up.reshape(M, -1).astype(np.float64))
    d, nd = _normalise(down.reshape(M, -1).astype(np.float64))
    A = (u @ d.T) / tau
    row = log_softmax(A, axis=1)
    col = log_softmax(A, axis=0)
    diag = np.arange(M)
    loss = float(-(row[diag, diag].sum() + col[diag, diag].sum()) / (2 * M))
    res = ContrastiveResult(loss)
    if with_grad:
        G = np.exp(row) + np.exp(col)
        G[diag, diag] -= 2.0
        G /= 2 * M * tau
        res.grad_up = _normalise_vjp(u, nu, G @ d).reshape(up.shape)
        res.grad_down = _normalise_vjp(d, nd, G.T @ u).reshape(down.shape)
    return res
