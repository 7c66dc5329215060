"""Structure induction: entangled DAGs and per-sentence binary trees.

Both inducers run the same greedy agglomerative loop: repeatedly merge the
adjacent frontier pair whose embeddings have the highest cosine similarity.
The entangled variant keeps one node per distinct span across the whole
batch and merges every occurrence of the chosen pair at once; the
sentential variant gives every occurrence its own node.
"""

from __future__ import annotations

import heapq
import json
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .corpus import Batch

LEFT, RIGHT = 0, 1

EmbedFn = Callable[[int], np.ndarray]
ComposeFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def cosine_flat(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine over flattened vectors; zero-norm inputs score 0."""
    a = np.ravel(a).astype(np.float64, copy=False)
    b = np.ravel(b).astype(np.float64, copy=False)
    na = float(np.sqrt(a @ a))
    nb = float(np.sqrt(b @ b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class GraphNode:
    id: int
    signature: tuple[int, ...]
    children: tuple[int, int] | None
    parents: tuple[tuple[int, int, int], ...]  # (parent, side, count)
    token: int | None

    @property
    def is_leaf(self) -> bool:
        return self.children is None


class EntangledGraph:
    """Node table plus child edges and weighted parent-context edges.

    Nodes are stored column-wise. ``left``/``right`` hold the canonical
    children (-1 for leaves). Context edges ``(ctx_child, ctx_parent,
    ctx_side, ctx_count)`` say that ``ctx_child`` sat on side ``ctx_side``
    of ``ctx_parent`` in ``ctx_count`` frontier occurrences. ``root_count``
    counts the sentences a node spans entirely.
    """

    def __init__(
        self,
        signatures: list[tuple[int, ...]],
        left: np.ndarray,
        right: np.ndarray,
        token: np.ndarray,
        contexts: dict[tuple[int, int, int], int],
        sentence_roots: list[int],
        leaf_occurrences: list[list[int]],
        entangled: bool,
        induction_up: np.ndarray | None = None,
    ):
        self.signatures = signatures
        self.left = left
        self.right = right
        self.token = token
        keys = sorted(contexts)
        self.ctx_child = np.array([k[0] for k in keys], dtype=np.int64)
        self.ctx_parent = np.array([k[1] for k in keys], dtype=np.int64)
        self.ctx_side = np.array([k[2] for k in keys], dtype=np.int64)
        self.ctx_count = np.array([contexts[k] for k in keys], dtype=np.int64)
        self.sentence_roots = sentence_roots
        self.leaf_occurrences = leaf_occurrences
        self.entangled = entangled
        self.root_count = np.bincount(np.asarray(sentence_roots, dtype=np.int64), minlength=len(signatures))
        self.roots = [int(i) for i in np.flatnonzero(self.root_count)]
        # node ids are assigned in merge order, children always first
        self.topo_up = list(range(len(signatures)))
        self.induction_up = induction_up

    def __len__(self) -> int:
        return len(self.signatures)

    @property
    def n_nodes(self) -> int:
        return len(self.signatures)

    @cached_property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.left < 0)

    @cached_property
    def internal(self) -> np.ndarray:
        return np.flatnonzero(self.left >= 0)

    @cached_property
    def span_length(self) -> np.ndarray:
        return np.array([len(s) for s in self.signatures], dtype=np.int64)

    @cached_property
    def up_levels(self) -> list[np.ndarray]:
        """Internal nodes grouped by height; every child sits in an earlier group."""
        height = np.zeros(len(self), dtype=np.int64)
        for n in self.internal:
            height[n] = 1 + max(height[self.left[n]], height[self.right[n]])
        return [np.flatnonzero(height == h) for h in range(1, int(height.max(initial=0)) + 1)]

    @cached_property
    def down_levels(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Groups of (nodes, incoming context edge ids) in top-down order.

        Depth is the longest path from a context-free node, so every context
        parent of a node lies in a strictly earlier group.
        """
        n = len(self)
        incoming: list[list[int]] = [[] for _ in range(n)]
        for e, c in enumerate(self.ctx_child):
            incoming[c].append(e)
        depth = np.zeros(n, dtype=np.int64)
        # a context parent always spans more tokens than its child
        for node in np.argsort(-self.span_length, kind="stable"):
            if incoming[node]:
                depth[node] = 1 + max(depth[self.ctx_parent[e]] for e in incoming[node])
        levels = []
        for d in range(int(depth.max(initial=0)) + 1):
            nodes = np.flatnonzero(depth == d)
            edges = np.array(sorted(e for v in nodes for e in incoming[v]), dtype=np.int64)
            levels.append((nodes, edges))
        return levels

    @cached_property
    def context_weight(self) -> np.ndarray:
        """Normalised weight of each context edge within its child's context set."""
        total = self.root_count.astype(np.float64).copy()
        np.add.at(total, self.ctx_child, self.ctx_count)
        return self.ctx_count / total[self.ctx_child]

    @cached_property
    def root_weight(self) -> np.ndarray:
        total = self.root_count.astype(np.float64).copy()
        np.add.at(total, self.ctx_child, self.ctx_count)
        return self.root_count / total

    @cached_property
    def leaf_weight(self) -> np.ndarray:
        """Occurrence count of every leaf node across the batch."""
        counts = np.zeros(len(self), dtype=np.int64)
        for occ in self.leaf_occurrences:
            np.add.at(counts, np.asarray(occ, dtype=np.int64), 1)
        return counts[self.leaves]

    def parents_of(self, node: int) -> list[tuple[int, int, int]]:
        sel = np.flatnonzero(self.ctx_child == node)
        return [(int(self.ctx_parent[e]), int(self.ctx_side[e]), int(self.ctx_count[e])) for e in sel]

    def node(self, i: int) -> GraphNode:
        children = None if self.left[i] < 0 else (int(self.left[i]), int(self.right[i]))
        token = int(self.token[i]) if self.token[i] >= 0 else None
        return GraphNode(i, self.signatures[i], children, tuple(self.parents_of(i)), token)

    def nodes(self) -> list[GraphNode]:
        return [self.node(i) for i in range(len(self))]

    def to_json(self) -> dict:
        return {
            "entangled": self.entangled,
            "nodes": [
                {
                    "id": nd.id,
                    "signature": list(nd.signature),
                    "children": list(nd.children) if nd.children else None,
                    "parents": [{"parent": p, "side": "left" if s == LEFT else "right", "count": c} for p, s, c in nd.parents],
                }
                for nd in self.nodes()
            ],
            "roots": self.roots,
            "sentence_roots": list(self.sentence_roots),
            "topo": self.topo_up,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)


def count_nodes(graph: EntangledGraph) -> int:
    return len(graph)


def argmax_adjacent(frontier: Sequence[Sequence[np.ndarray]]) -> tuple[int, int]:
    """(sentence, position) of the most similar adjacent pair, leftmost on ties."""
    best, best_sim = None, -np.inf
    for s, row in enumerate(frontier):
        for i in range(len(row) - 1):
            sim = cosine_flat(row[i], row[i + 1])
            if sim > best_sim:
                best, best_sim = (s, i), sim
    if best is None:
        raise ValueError("no adjacent pairs")
    return best


def _induce(batch: Batch, embed_fn: EmbedFn, compose_fn: ComposeFn, entangle: bool) -> EntangledGraph:
    signatures: list[tuple[int, ...]] = []
    left: list[int] = []
    right: list[int] = []
    token: list[int] = []
    emb: list[np.ndarray] = []
    flat: list[np.ndarray] = []
    norm: list[float] = []
    sig_table: dict[tuple[int, ...], int] = {}

    def add_node(sig, lc, rc, tok, e):
        nid = len(signatures)
        signatures.append(sig)
        left.append(lc)
        right.append(rc)
        token.append(tok)
        emb.append(e)
        f = np.ravel(e).astype(np.float64)
        flat.append(f)
        norm.append(float(np.sqrt(f @ f)))
        if entangle:
            sig_table[sig] = nid
        return nid

    leaf_cache: dict[int, np.ndarray] = {}

    def leaf(tok):
        if entangle and (tok,) in sig_table:
            return sig_table[(tok,)]
        if tok not in leaf_cache:
            leaf_cache[tok] = embed_fn(tok)
        return add_node((tok,), -1, -1, tok, leaf_cache[tok])

    # frontier as linked entries; offset is the first token position of the span
    e_node: list[int] = []
    e_sent: list[int] = []
    e_off: list[int] = []
    e_prev: list[int] = []
    e_next: list[int] = []
    alive: list[bool] = []
    heads: list[int] = []
    leaf_occ: list[list[int]] = []
    for s, seq in enumerate(batch.sequences):
        occ = []
        for pos, tok in enumerate(seq.ids):
            nid = leaf(int(tok))
            occ.append(nid)
            eid = len(e_node)
            e_node.append(nid)
            e_sent.append(s)
            e_off.append(pos)
            e_prev.append(eid - 1 if pos > 0 else -1)
            e_next.append(eid + 1 if pos < len(seq) - 1 else -1)
            alive.append(True)
            if pos == 0:
                heads.append(eid)
        leaf_occ.append(occ)

    sim_cache: dict[tuple[int, int], float] = {}

    def sim(a, b):
        key = (a, b)
        if key in sim_cache:
            return sim_cache[key]
        if norm[a] == 0.0 or norm[b] == 0.0:
            v = 0.0
        else:
            v = float(np.clip((flat[a] @ flat[b]) / (norm[a] * norm[b]), -1.0, 1.0))
        if entangle:
            sim_cache[key] = v
        return v

    pair_index: dict[tuple[int, int], set[int]] = defaultdict(set)
    heap: list[tuple[float, int, int, int, int, int]] = []

    def link(eid):
        nxt = e_next[eid]
        if nxt < 0:
            return
        a, b = e_node[eid], e_node[nxt]
        pair_index[(a, b)].add(eid)
        heapq.heappush(heap, (-sim(a, b), e_sent[eid], e_off[eid], eid, a, b))

    def unlink(eid):
        nxt = e_next[eid]
        if eid >= 0 and nxt >= 0:
            pair_index[(e_node[eid], e_node[nxt])].discard(eid)

    for eid in range(len(e_node)):
        link(eid)

    contexts: dict[tuple[int, int, int], int] = defaultdict(int)

    def valid(eid, a, b):
        if not alive[eid] or e_node[eid] != a:
            return False
        nxt = e_next[eid]
        return nxt >= 0 and e_node[nxt] == b

    while heap:
        _, _, _, eid, a, b = heapq.heappop(heap)
        if not valid(eid, a, b):
            continue
        joint = signatures[a] + signatures[b]
        p = sig_table.get(joint) if entangle else None
        if p is None:
            p = add_node(joint, a, b, -1, compose_fn(emb[a], emb[b]))
        if entangle:
            occurrences = sorted(pair_index[(a, b)], key=lambda e: (e_sent[e], e_off[e]))
        else:
            occurrences = [eid]
        for occ in occurrences:
            # overlapping occurrences (e.g. "x x x") resolve left to right
            if not valid(occ, a, b):
                continue
            r = e_next[occ]
            prv = e_prev[occ]
            nxt = e_next[r]
            unlink(prv)
            unlink(occ)
            unlink(r)
            e_node[occ] = p
            alive[r] = False
            e_next[occ] = nxt
            if nxt >= 0:
                e_prev[nxt] = occ
            contexts[(a, p, LEFT)] += 1
            contexts[(b, p, RIGHT)] += 1
            if prv >= 0:
                link(prv)
            link(occ)

    sentence_roots = [e_node[h] for h in heads]
    up = np.stack(emb) if emb else None
    return EntangledGraph(
        signatures,
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(token, dtype=np.int64),
        dict(contexts),
        sentence_roots,
        leaf_occ,
        entangle,
        up,
    )


def induce_entangled(batch: Batch, embed_fn: EmbedFn, compose_fn: ComposeFn) -> EntangledGraph:
    return _induce(batch, embed_fn, compose_fn, entangle=True)


def induce_sentential(batch: Batch, embed_fn: EmbedFn, compose_fn: ComposeFn) -> EntangledGraph:
    return _induce(batch, embed_fn, compose_fn, entangle=False)


def induce(batch: Batch, embed_fn: EmbedFn, compose_fn: ComposeFn, structure: str = "entangled") -> EntangledGraph:
    if structure == "entangled":
        return induce_entangled(batch, embed_fn, compose_fn)
    if structure == "sentential":
        return induce_sentential(batch, embed_fn, compose_fn)
    raise ValueError(f"unknown structure {structure!r}")


def sentential_node_count(batch: Batch) -> int:
    return sum(2 * len(s) - 1 for s in batch.sequences)
