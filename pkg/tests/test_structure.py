import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from banyan.corpus import Batch
from banyan.model import Model, init_params
from banyan.structure import (
    LEFT, RIGHT, argmax_adjacent, count_nodes, induce_entangled, induce_sentential, sentential_node_count,
)

from conftest import AngleEmbedder, angle_vec, reference_induce

# some are born to endless night / some are born to sweet delight
FIG2_ANGLES = {1: 0.0, 2: 1.0, 3: 3.0, 4: 6.0, 5: 60.0, 6: 62.0, 7: 120.0, 8: 122.5}
FIG2 = Batch.of([[1, 2, 3, 4, 5, 6], [1, 2, 3, 4, 7, 8]])


def rigged(batch, angles, structure="entangled"):
    emb = AngleEmbedder(angles)
    fn = induce_entangled if structure == "entangled" else induce_sentential
    return fn(batch, emb.embed, emb.compose), emb


def sig_index(g):
    return {s: i for i, s in enumerate(g.signatures)}


class TestEntangled:
    def test_duplicate_sentences_share_everything(self):
        g, _ = rigged(Batch.of([[1, 2], [1, 2]]), {1: 0, 2: 10})
        assert count_nodes(g) == 3
        idx = sig_index(g)
        assert g.roots == [idx[(1, 2)]]
        assert g.root_count[idx[(1, 2)]] == 2
        assert g.parents_of(idx[(1, 2)]) == []
        assert g.parents_of(idx[(1,)]) == [(idx[(1, 2)], LEFT, 2)]

    def test_single_token(self):
        g, _ = rigged(Batch.of([[1]]), {1: 0})
        assert count_nodes(g) == 1
        assert g.roots == [0]
        assert g.leaves.tolist() == [0]

    def test_fig2_shared_subgraph(self):
        g, _ = rigged(FIG2, FIG2_ANGLES)
        idx = sig_index(g)
        shared = idx[(1, 2, 3, 4)]
        root1, root2 = idx[(1, 2, 3, 4, 5, 6)], idx[(1, 2, 3, 4, 7, 8)]
        assert sorted(g.parents_of(shared)) == sorted([(root1, LEFT, 1), (root2, LEFT, 1)])
        assert (int(g.left[root1]), int(g.right[root1])) == (shared, idx[(5, 6)])
        assert (int(g.left[root2]), int(g.right[root2])) == (shared, idx[(7, 8)])
        assert count_nodes(g) == 15
        assert sorted(g.roots) == sorted([root1, root2])

    def test_fig2_merge_order(self):
        # hand-computed angular gaps: 1, 2, 2.5 (leftmost), 2.5, 4.25, then the roots
        g, _ = rigged(FIG2, FIG2_ANGLES)
        internal = [g.signatures[i] for i in g.internal]
        assert internal == [
            (1, 2), (5, 6), (1, 2, 3), (7, 8), (1, 2, 3, 4), (1, 2, 3, 4, 5, 6), (1, 2, 3, 4, 7, 8),
        ]

    def test_compose_once_per_distinct_span(self):
        _, emb = rigged(Batch.of([[1, 2, 3]] * 5), {1: 0, 2: 5, 3: 30})
        assert emb.compose_calls == 2

    def test_overlapping_pair_resolves_left_to_right(self):
        g, _ = rigged(Batch.of([[1, 1, 1]]), {1: 0})
        idx = sig_index(g)
        assert (1, 1) in idx
        root = g.sentence_roots[0]
        assert g.signatures[root] == (1, 1, 1)
        assert (int(g.left[root]), int(g.right[root])) == (idx[(1, 1)], idx[(1,)])

    def test_graph_json(self):
        g, _ = rigged(FIG2, FIG2_ANGLES)
        doc = json.loads(g.dumps())
        assert len(doc["nodes"]) == 15
        assert set(doc) >= {"nodes", "roots", "topo"}
        node = doc["nodes"][sig_index(g)[(1, 2, 3, 4)]]
        assert {p["side"] for p in node["parents"]} == {"left"}


class TestSentential:
    def test_duplicates_are_separate(self):
        g, _ = rigged(Batch.of([[1, 2], [1, 2]]), {1: 0, 2: 10}, "sentential")
        assert count_nodes(g) == 6
        assert len(g.roots) == 2

    def test_each_node_has_at_most_one_parent(self):
        g, _ = rigged(FIG2, FIG2_ANGLES, "sentential")
        for n in range(len(g)):
            ps = g.parents_of(n)
            assert len(ps) <= 1 and all(c == 1 for _, _, c in ps)

    def test_node_count_identity(self):
        b = Batch.of([[1, 2, 3], [4], [1, 1, 2, 2]])
        g, _ = rigged(b, {i: 7.0 * i for i in range(5)}, "sentential")
        assert count_nodes(g) == sentential_node_count(b) == 5 + 1 + 7

    def test_distinct_tokens_match_entangled(self):
        b = Batch.of([[1, 2, 3], [4, 5, 6, 7]])
        angles = {i: 13.0 * i ** 1.5 for i in range(1, 8)}
        ge, _ = rigged(b, angles)
        gs, _ = rigged(b, angles, "sentential")
        assert count_nodes(ge) == count_nodes(gs)
        assert set(ge.signatures) == set(gs.signatures)


class TestArgmaxAdjacent:
    def test_leftmost_tie(self):
        a1 = np.degrees(np.arccos(0.1))
        a2 = np.degrees(np.arccos(0.9))
        row = [angle_vec(0), angle_vec(a1), angle_vec(a1 + a2), angle_vec(a1 + 2 * a2)]
        assert argmax_adjacent([row]) == (0, 1)

    def test_single_pair(self):
        assert argmax_adjacent([[angle_vec(0)], [angle_vec(0), angle_vec(90)]]) == (1, 0)

    def test_sentence_major_tie_break(self):
        row = [angle_vec(0), angle_vec(10)]
        assert argmax_adjacent([row, row]) == (0, 0)

    def test_zero_vector_never_beats_positive(self):
        row = [np.zeros((1, 2)), angle_vec(0), angle_vec(80)]
        assert argmax_adjacent([row]) == (0, 1)

    def test_no_pairs(self):
        with pytest.raises(ValueError):
            argmax_adjacent([[angle_vec(0)]])


batches = st.lists(st.lists(st.integers(1, 4), min_size=1, max_size=6), min_size=1, max_size=4)


def model_for(seed, V=5):
    return Model(init_params(V, 2, 2, "diag", 1.0, seed=seed, dtype=np.float64))


def check_graph(g, batch):
    # dedup
    if g.entangled:
        assert len(set(g.signatures)) == len(g)
    # topological order and signature concatenation
    for n in g.internal:
        l, r = g.left[n], g.right[n]
        assert l < n and r < n
        assert g.signatures[n] == g.signatures[l] + g.signatures[r]
    for c, p in zip(g.ctx_child, g.ctx_parent):
        assert g.span_length[p] > g.span_length[c]
    # conservation
    for b, seq in enumerate(batch.sequences):
        assert g.signatures[g.sentence_roots[b]] == seq.ids
        assert [g.signatures[n] for n in g.leaf_occurrences[b]] == [(t,) for t in seq.ids]
    # every non-root has a context
    has_ctx = set(g.ctx_child.tolist())
    for n in range(len(g)):
        assert n in has_ctx or g.root_count[n] > 0
    assert len(g.roots) == len({s.ids for s in batch.sequences}) or not g.entangled


@settings(max_examples=150, deadline=None)
@given(rows=batches, seed=st.integers(0, 50))
def test_matches_reference_algorithm(rows, seed):
    batch = Batch.of(rows)
    m = model_for(seed)
    g = induce_entangled(batch, m.embed_fn, m.compose_fn)
    sigs, children, contexts = reference_induce(batch, m.embed_fn, m.compose_fn)
    assert g.signatures == sigs
    for n in g.internal:
        assert (g.signatures[g.left[n]], g.signatures[g.right[n]]) == children[g.signatures[n]]
    got = {(g.signatures[c], g.signatures[p], int(s)): int(k)
           for c, p, s, k in zip(g.ctx_child, g.ctx_parent, g.ctx_side, g.ctx_count)}
    assert got == contexts


@settings(max_examples=150, deadline=None)
@given(rows=batches, seed=st.integers(0, 50))
def test_graph_invariants(rows, seed):
    batch = Batch.of(rows)
    m = model_for(seed)
    ge = induce_entangled(batch, m.embed_fn, m.compose_fn)
    gs = induce_sentential(batch, m.embed_fn, m.compose_fn)
    check_graph(ge, batch)
    check_graph(gs, batch)
    assert count_nodes(gs) == sentential_node_count(batch)
    assert count_nodes(ge) <= count_nodes(gs)
    repeated = len(set(gs.signatures)) < len(gs)
    assert (count_nodes(ge) < count_nodes(gs)) == repeated


@settings(max_examples=50, deadline=None)
@given(rows=batches, seed=st.integers(0, 50))
def test_induction_is_deterministic(rows, seed):
    batch = Batch.of(rows)
    g1 = model_for(seed).induce(batch)
    g2 = model_for(seed).induce(batch)
    assert g1.signatures == g2.signatures
    assert g1.topo_up == g2.topo_up
    assert g1.left.tolist() == g2.left.tolist()
    assert g1.ctx_parent.tolist() == g2.ctx_parent.tolist()
    assert g1.ctx_count.tolist() == g2.ctx_count.tolist()


def test_levels_are_consistent():
    m = model_for(3, V=9)
    g = m.induce(Batch.of([[1, 2, 3, 4, 1, 2], [3, 4, 1, 2], [8, 1, 2, 5, 6, 7]]))
    done = set(g.leaves.tolist())
    for level in g.up_levels:
        assert all(g.left[n] in done and g.right[n] in done for n in level)
        done |= set(level.tolist())
    assert done == set(range(len(g)))
    seen = set()
    for nodes, edges in g.down_levels:
        assert all(g.ctx_parent[e] in seen for e in edges)
        assert set(g.ctx_child[edges].tolist()) <= set(nodes.tolist())
        seen |= set(nodes.tolist())
    assert seen == set(range(len(g)))
    total = np.zeros(len(g))
    np.add.at(total, g.ctx_child, g.context_weight)
    np.testing.assert_allclose(total + g.root_weight, 1.0)
