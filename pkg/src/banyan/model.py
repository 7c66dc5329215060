"""Parameters, message-passing primitives and the up/down passes.

Embeddings are arrays shaped ``[..., K, U]``: K channels of size U. The
composition and decomposition weights act on the last axis and are shared
by every channel and every node.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit as sigmoid

from .structure import LEFT, RIGHT, EntangledGraph, cosine_flat

MAGIC = b"BNYN1"
MODES = ("diag", "dense")
DIAG_NAMES = ("comp_gate_l", "comp_gate_r", "comp_bias", "dec_gate_l", "dec_gate_r", "dec_bias_l", "dec_bias_r")
DENSE_NAMES = ("comp_w", "comp_b", "dec_w", "dec_b")


@dataclass(frozen=True)
class EmbeddingConfig:
    U: int = 2
    K: int = 128

    def __post_init__(self):
        if self.U < 1 or self.K < 1:
            raise ValueError("U and K must be >= 1")

    @property
    def D(self) -> int:
        return self.U * self.K


def fn_shapes(mode: str, U: int) -> dict[str, tuple[int, ...]]:
    if mode == "diag":
        return {name: (U,) for name in DIAG_NAMES}
    if mode == "dense":
        return {"comp_w": (2 * U, U), "comp_b": (U,), "dec_w": (U, 2 * U), "dec_b": (2 * U,)}
    raise ValueError(f"unknown function mode {mode!r}")


def non_embedding_count(mode: str, U: int) -> int:
    # diag: 7U, dense: 4U^2 + 3U
    return sum(int(np.prod(s)) for s in fn_shapes(mode, U).values())


@dataclass
class Parameters:
    mode: str
    V: int
    U: int
    K: int
    psi: np.ndarray
    gamma: np.ndarray
    fn: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def D(self) -> int:
        return self.U * self.K

    @property
    def dtype(self):
        return self.psi.dtype

    def names(self) -> list[str]:
        return ["psi", *fn_shapes(self.mode, self.U), "gamma"]

    def named(self) -> list[tuple[str, np.ndarray]]:
        """Tensors in checkpoint order: embedding, functions, dembedding."""
        return [(n, self[n]) for n in self.names()]

    def __getitem__(self, name: str) -> np.ndarray:
        if name == "psi":
            return self.psi
        if name == "gamma":
            return self.gamma
        return self.fn[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name == "psi":
            self.psi = value
        elif name == "gamma":
            self.gamma = value
        else:
            self.fn[name] = value

    def astype(self, dtype) -> "Parameters":
        return Parameters(
            self.mode, self.V, self.U, self.K,
            self.psi.astype(dtype), self.gamma.astype(dtype),
            {k: v.astype(dtype) for k, v in self.fn.items()},
        )

    def copy(self) -> "Parameters":
        return self.astype(self.dtype)

    def zeros_like(self) -> "Parameters":
        z = self.copy()
        for name, arr in z.named():
            z[name] = np.zeros_like(arr)
        return z

    def count(self) -> dict[str, int]:
        fn = sum(v.size for v in self.fn.values())
        emb = self.psi.size + self.gamma.size
        return {"non_embedding": int(fn), "embedding": int(emb), "total": int(fn + emb)}


def init_params(V: int, U: int = 2, K: int = 128, mode: str = "diag", init_range: float = 0.1,
                seed: int = 0, dtype=np.float32) -> Parameters:
    """Uniform(-r, r) embeddings; neutral diagonal gates; fan-in scaled dense weights."""
    rng = np.random.default_rng(seed)
    D = U * K
    psi = rng.uniform(-init_range, init_range, size=(V, D))
    gamma = rng.uniform(-init_range, init_range, size=(D, V))
    fn = {}
    for name, shape in fn_shapes(mode, U).items():
        if name in ("comp_w", "dec_w"):
            bound = 1.0 / np.sqrt(shape[0])
            fn[name] = rng.uniform(-bound, bound, size=shape)
        else:
            fn[name] = np.zeros(shape)
    return Parameters(mode, V, U, K, psi, gamma, fn).astype(dtype)


# ---------------------------------------------------------------------------
# primitives

def embed(params: Parameters, token_id: int) -> np.ndarray:
    if not 0 <= token_id < params.V:
        raise IndexError(f"token id {token_id} out of range [0, {params.V})")
    return params.psi[token_id].reshape(params.K, params.U)


def embed_many(params: Parameters, token_ids: np.ndarray) -> np.ndarray:
    return params.psi[token_ids].reshape(-1, params.K, params.U)


def _check(params: Parameters, *xs: np.ndarray) -> None:
    for x in xs:
        if x.shape[-2:] != (params.K, params.U):
            raise ValueError(f"expected trailing shape {(params.K, params.U)}, got {x.shape}")


def compose_diag(params: Parameters, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    _check(params, left, right)
    f = params.fn
    return left * sigmoid(f["comp_gate_l"]) + right * sigmoid(f["comp_gate_r"]) + f["comp_bias"]


def decompose_diag(params: Parameters, parent: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    _check(params, parent)
    f = params.fn
    return (parent * sigmoid(f["dec_gate_l"]) + f["dec_bias_l"],
            parent * sigmoid(f["dec_gate_r"]) + f["dec_bias_r"])


def compose_dense(params: Parameters, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    _check(params, left, right)
    x = np.concatenate([left, right], axis=-1)
    return x @ params.fn["comp_w"] + params.fn["comp_b"]


def decompose_dense(params: Parameters, parent: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    _check(params, parent)
    y = parent @ params.fn["dec_w"] + params.fn["dec_b"]
    return y[..., :params.U], y[..., params.U:]


def compose(params: Parameters, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    if params.mode == "diag":
        return compose_diag(params, left, right)
    return compose_dense(params, left, right)


def decompose(params: Parameters, parent: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if params.mode == "diag":
        return decompose_diag(params, parent)
    return decompose_dense(params, parent)


def dembed(params: Parameters, down: np.ndarray) -> np.ndarray:
    """Logits over the vocabulary from one or more ``[K, U]`` embeddings."""
    flat = down.reshape(*down.shape[:-2], params.D)
    return flat @ params.gamma


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return cosine_flat(a, b)


# vector-Jacobian products of the primitives; param grads are summed over
# every leading axis (nodes and channels share weights)

def _sum_lead(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1]).sum(axis=0)


def compose_vjp(params: Parameters, left, right, g) -> tuple[np.ndarray, np.ndarray, dict[str, np.ndarray]]:
    f = params.fn
    if params.mode == "diag":
        sl, sr = sigmoid(f["comp_gate_l"]), sigmoid(f["comp_gate_r"])
        grads = {
            "comp_gate_l": _sum_lead(g * left) * sl * (1 - sl),
            "comp_gate_r": _sum_lead(g * right) * sr * (1 - sr),
            "comp_bias": _sum_lead(g),
        }
        return g * sl, g * sr, grads
    x = np.concatenate([left, right], axis=-1)
    x2 = x.reshape(-1, x.shape[-1])
    g2 = g.reshape(-1, g.shape[-1])
    gx = g @ f["comp_w"].T
    grads = {"comp_w": x2.T @ g2, "comp_b": g2.sum(axis=0)}
    U = params.U
    return gx[..., :U], gx[..., U:], grads


def decompose_vjp(params: Parameters, parent, g_left, g_right) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    f = params.fn
    if params.mode == "diag":
        tl, tr = sigmoid(f["dec_gate_l"]), sigmoid(f["dec_gate_r"])
        grads = {
            "dec_gate_l": _sum_lead(g_left * parent) * tl * (1 - tl),
            "dec_gate_r": _sum_lead(g_right * parent) * tr * (1 - tr),
            "dec_bias_l": _sum_lead(g_left),
            "dec_bias_r": _sum_lead(g_right),
        }
        return g_left * tl + g_right * tr, grads
    gy = np.concatenate([g_left, g_right], axis=-1)
    p2 = parent.reshape(-1, parent.shape[-1])
    gy2 = gy.reshape(-1, gy.shape[-1])
    grads = {"dec_w": p2.T @ gy2, "dec_b": gy2.sum(axis=0)}
    return gy @ f["dec_w"].T, grads


# ---------------------------------------------------------------------------
# passes over a graph

@dataclass
class Masks:
    """Inverted-dropout masks; None means no dropout at that site."""
    leaf: np.ndarray | None = None   # [n_leaves, K, U]
    comp: np.ndarray | None = None   # [M, K, U]
    dec: np.ndarray | None = None    # [M, 2, K, U]


@dataclass
class ForwardTrace:
    graph: EntangledGraph
    params: Parameters
    masks: Masks
    up: np.ndarray
    down: np.ndarray
    msg: np.ndarray  # post-dropout decomposition outputs [M, 2, K, U]


def upward_pass(graph: EntangledGraph, params: Parameters, masks: Masks | None = None) -> np.ndarray:
    masks = masks or Masks()
    M = len(graph)
    up = np.zeros((M, params.K, params.U), dtype=params.dtype)
    leaves = graph.leaves
    x = embed_many(params, graph.token[leaves])
    if masks.leaf is not None:
        x = x * masks.leaf
    up[leaves] = x
    for level in graph.up_levels:
        y = compose(params, up[graph.left[level]], up[graph.right[level]])
        if masks.comp is not None:
            y = y * masks.comp[level]
        up[level] = y
    return up


def downward_pass(graph: EntangledGraph, up: np.ndarray, params: Parameters,
                  masks: Masks | None = None, return_messages: bool = False):
    """Top-down decomposition with occurrence-weighted context averaging.

    A node spanning a whole sentence takes its own up embedding as the
    message of that root context.
    """
    masks = masks or Masks()
    M = len(graph)
    down = np.zeros_like(up)
    msg = np.zeros((M, 2, params.K, params.U), dtype=up.dtype)
    w = graph.context_weight
    rw = graph.root_weight
    internal = graph.left >= 0
    for nodes, edges in graph.down_levels:
        acc = rw[nodes, None, None] * up[nodes].astype(np.float64)
        if edges.size:
            contrib = w[edges, None, None] * msg[graph.ctx_parent[edges], graph.ctx_side[edges]].astype(np.float64)
            pos = np.searchsorted(nodes, graph.ctx_child[edges])
            np.add.at(acc, pos, contrib)
        down[nodes] = acc.astype(up.dtype)
        emit = nodes[internal[nodes]]
        if emit.size:
            ml, mr = decompose(params, down[emit])
            m = np.stack([ml, mr], axis=1)
            if masks.dec is not None:
                m = m * masks.dec[emit]
            msg[emit] = m
    if return_messages:
        return down, msg
    return down


def forward(graph: EntangledGraph, params: Parameters, masks: Masks | None = None) -> ForwardTrace:
    masks = masks or Masks()
    up = upward_pass(graph, params, masks)
    down, msg = downward_pass(graph, up, params, masks, return_messages=True)
    return ForwardTrace(graph, params, masks, up, down, msg)


class Model:
    """Parameters plus eval-mode hooks used by structure induction."""

    def __init__(self, params: Parameters):
        self.params = params

    def embed_fn(self, token_id: int) -> np.ndarray:
        return embed(self.params, token_id)

    def compose_fn(self, left: np.ndarray, right: np.ndarray) -> np.ndarray:
        return compose(self.params, left, right)

    def induce(self, batch, structure: str = "entangled") -> EntangledGraph:
        from .structure import induce
        return induce(batch, self.embed_fn, self.compose_fn, structure)


# ---------------------------------------------------------------------------
# checkpoint I/O

def save_checkpoint(path: str | Path, params: Parameters) -> None:
    header = MAGIC + struct.pack("<4I", MODES.index(params.mode), params.V, params.U, params.K)
    with open(path, "wb") as f:
        f.write(header)
        for _, arr in params.named():
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> Parameters:
    data = Path(path).read_bytes()
    if data[:5] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    mode_i, V, U, K = struct.unpack_from("<4I", data, 5)
    if mode_i >= len(MODES):
        raise ValueError(f"{path}: unknown mode {mode_i}")
    mode = MODES[mode_i]
    shapes = [("psi", (V, U * K)), *fn_shapes(mode, U).items(), ("gamma", (U * K, V))]
    offset = 5 + 16
    tensors = {}
    for name, shape in shapes:
        n = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset)
        tensors[name] = arr.reshape(shape).astype(np.float32)
        offset += 4 * n
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
    psi = tensors.pop("psi")
    gamma = tensors.pop("gamma")
    return Parameters(mode, V, U, K, psi, gamma, tensors)
