import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from banyan.bench import node_growth, param_audit, runtime_count, write_growth_csv, write_growth_dat
from banyan.corpus import TokenSequence
from banyan.model import init_params
from banyan.training import TrainConfig


def params(V=20, mode="diag"):
    return init_params(V, 2, 8, mode, 0.1, seed=0)


@pytest.mark.parametrize("B", [1, 2, 7, 32])
def test_identical_sentences(B):
    seqs = [TokenSequence((1, 2, 3))] * B
    (row,) = node_growth(seqs, [B], params())
    assert row["nodes_sentential"] == 5 * B
    assert row["nodes_entangled"] == 5


def test_unique_tokens_ratio_one():
    seqs = [TokenSequence(tuple(range(3 * i + 1, 3 * i + 4))) for i in range(16)]
    rows = node_growth(seqs, [2, 4, 8, 16], params(V=60))
    assert [r["ratio"] for r in rows] == [1.0] * 4


def test_corpus_too_small():
    with pytest.raises(ValueError, match="corpus too small"):
        node_growth([TokenSequence((1,))] * 3, [2, 4], params())


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.integers(1, 5), min_size=1, max_size=6), min_size=4, max_size=12))
def test_growth_invariants(rows):
    seqs = [TokenSequence(tuple(r)) for r in rows]
    for r in node_growth(seqs, [1, 2, 4], params(V=6)):
        assert r["nodes_entangled"] <= r["nodes_sentential"]
        assert r["nodes_sentential"] == sum(2 * len(s) - 1 for s in seqs[:r["batch_size"]])


def test_writers(tmp_path):
    rows = node_growth([TokenSequence((1, 2, 3))] * 4, [2, 4], params())
    write_growth_csv(rows, tmp_path / "g.csv")
    write_growth_dat(rows, tmp_path / "g.dat")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines == ["batch_size,nodes_entangled,nodes_sentential,ratio", "2,5,10,0.500000", "4,5,20,0.250000"]
    data = np.loadtxt(tmp_path / "g.dat")
    np.testing.assert_array_equal(data[:, 0], [2, 4])


class TestParamAudit:
    def test_diag_u2(self):
        assert param_audit(TrainConfig(functions="diag", U=2, K=128))["non_embedding"] == 14

    def test_dense_u16(self):
        assert param_audit(TrainConfig(functions="dense", U=16, K=16))["non_embedding"] == 1072

    def test_diag_u1(self):
        assert param_audit(TrainConfig(functions="diag", U=1))["non_embedding"] == 7

    def test_embedding_count(self):
        a = param_audit(TrainConfig(U=2, K=128), vocab_size=100)
        assert a["embedding"] == 2 * 100 * 256 and a["total"] == a["embedding"] + 14

    @pytest.mark.parametrize("mode,U,K", [("diag", 2, 128), ("dense", 16, 16), ("diag", 1, 3), ("dense", 3, 5)])
    def test_runtime_agrees(self, mode, U, K):
        p = init_params(11, U, K, mode)
        counted = runtime_count(p)
        manual = sum(a.size for _, a in p.named())
        assert counted["total"] == manual
        assert counted == param_audit(TrainConfig(functions=mode, U=U, K=K), vocab_size=11)
