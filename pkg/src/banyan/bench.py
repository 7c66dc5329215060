"""Node growth of entangled vs sentential structure, and parameter audits."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

from .corpus import Batch, TokenSequence
from .model import Model, Parameters, fn_shapes, non_embedding_count
from .training import TrainConfig


def node_growth(sequences: Sequence[TokenSequence], batch_sizes: Sequence[int], params: Parameters) -> list[dict]:
    """Induce both structures on the same corpus prefix for every batch size."""
    if not batch_sizes:
        raise ValueError("no batch sizes given")
    if len(sequences) < max(batch_sizes):
        raise ValueError(f"corpus too small: {len(sequences)} sentences < batch size {max(batch_sizes)}")
    model = Model(params)
    rows = []
    for bs in batch_sizes:
        batch = Batch(list(sequences[:bs]))
        ent = len(model.induce(batch, "entangled"))
        sent = len(model.induce(batch, "sentential"))
        rows.append({"batch_size": bs, "nodes_entangled": ent, "nodes_sentential": sent, "ratio": ent / sent})
    return rows


def write_growth_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["batch_size", "nodes_entangled", "nodes_sentential", "ratio"])
        for r in rows:
            w.writerow([r["batch_size"], r["nodes_entangled"], r["nodes_sentential"], f"{r['ratio']:.6f}"])


def write_growth_dat(rows: list[dict], path: str | Path) -> None:
    """Whitespace-separated columns for gnuplot."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("# batch_size nodes_entangled nodes_sentential ratio\n")
        for r in rows:
            f.write(f"{r['batch_size']} {r['nodes_entangled']} {r['nodes_sentential']} {r['ratio']:.6f}\n")


def param_audit(config: TrainConfig, vocab_size: int = 0) -> dict[str, int]:
    non_emb = non_embedding_count(config.functions, config.U)
    emb = 2 * vocab_size * config.U * config.K
    return {"non_embedding": non_emb, "embedding": emb, "total": non_emb + emb}


def runtime_count(params: Parameters) -> dict[str, int]:
    """Count allocated scalars, independent of the audit formulae."""
    assert set(params.fn) == set(fn_shapes(params.mode, params.U))
    return params.count()
