"""Command line entry point: train, eval, bench and export."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .bench import node_growth, param_audit, write_growth_csv, write_growth_dat
from .corpus import Batch, CorpusError, Vocabulary, build_vocab, load_corpus, load_id_corpus
from .evaluation import SimilarityDataset, evaluate
from .model import Model, Parameters, init_params, load_checkpoint, save_checkpoint
from .training import ConfigError, TrainConfig, TrainingDiverged, epoch_summary, train

log = logging.getLogger("banyan")

MODEL_FILE = "model.bnyn"
VOCAB_FILE = "vocab.tsv"
METRICS_FILE = "metrics.csv"


class CLIError(Exception):
    pass


def _threads():
    n = os.environ.get("BANYAN_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(n))


def _resolve_model(path: str) -> tuple[Path, Path]:
    p = Path(path)
    ckpt = p / MODEL_FILE if p.is_dir() else p
    vocab = ckpt.with_name(VOCAB_FILE)
    if not ckpt.exists():
        raise CLIError(f"checkpoint not found: {ckpt}")
    if not vocab.exists():
        raise CLIError(f"vocabulary not found next to checkpoint: {vocab}")
    return ckpt, vocab


def load_model(path: str) -> tuple[Parameters, Vocabulary]:
    ckpt, vocab_path = _resolve_model(path)
    params = load_checkpoint(ckpt)
    vocab = Vocabulary.load(vocab_path)
    if len(vocab) != params.V:
        raise CLIError(f"vocabulary size {len(vocab)} does not match checkpoint V={params.V}")
    return params, vocab


def _load_config(args) -> TrainConfig:
    values = {}
    if args.config:
        cfg = TrainConfig.load(args.config)
        values = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    return TrainConfig(**values)


def _corpus(args, config: TrainConfig) -> tuple[list, Vocabulary]:
    path = Path(args.corpus)
    if not path.exists():
        raise CLIError(f"corpus not found: {path}")
    if getattr(args, "vocab", None):
        vocab = Vocabulary.load(args.vocab)
        if args.ids:
            return load_id_corpus(path, len(vocab), config.max_len), vocab
        return load_corpus(path, vocab, config.max_len), vocab
    if getattr(args, "ids", False):
        raise CLIError("--ids requires --vocab")
    vocab = build_vocab(path, config.min_count)
    return load_corpus(path, vocab, config.max_len), vocab


def cmd_train(args) -> int:
    config = _load_config(args)
    seqs, vocab = _corpus(args, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / VOCAB_FILE)
    (out / "config.cfg").write_text(config.dumps(), encoding="utf-8")
    try:
        res = train(config, seqs, len(vocab), out)
    except TrainingDiverged as e:
        print(f"training aborted: {e}; last good checkpoint kept in {out}", file=sys.stderr)
        return 2
    if config.epochs == 0:
        save_checkpoint(out / MODEL_FILE, res.params)
    summary = epoch_summary(res.metrics)
    if summary:
        last = max(summary)
        print(f"epoch {last}: loss {summary[last]['loss']:.5f} recon_acc {summary[last]['recon_acc']:.4f}")
    return 0


def cmd_eval(args) -> int:
    params, vocab = load_model(args.model)
    try:
        dataset = SimilarityDataset.load(args.data, level=args.task)
    except (CorpusError, ValueError) as e:
        raise CLIError(f"malformed dataset: {e}") from e
    report = evaluate(params, vocab, dataset, pool=args.pool)
    print(json.dumps(report))
    return 0


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.batch_sizes.split(",") if s.strip()]
    if args.model:
        params, vocab = load_model(args.model)
        config = TrainConfig(functions=params.mode, U=params.U, K=params.K)
        seqs = load_corpus(args.corpus, vocab, config.max_len)
    else:
        config = _load_config(args)
        seqs, vocab = _corpus(args, config)
        params = init_params(len(vocab), config.U, config.K, config.functions, config.init_range, config.seed)
    try:
        rows = node_growth(seqs, sizes, params)
    except ValueError as e:
        raise CLIError(str(e)) from e
    if args.out:
        out = Path(args.out)
        write_growth_csv(rows, out)
        write_growth_dat(rows, out.with_suffix(".dat"))
    print("batch_size,nodes_entangled,nodes_sentential,ratio")
    for r in rows:
        print(f"{r['batch_size']},{r['nodes_entangled']},{r['nodes_sentential']},{r['ratio']:.6f}")
    audit = param_audit(config, len(vocab))
    print(f"# params non_embedding={audit['non_embedding']} embedding={audit['embedding']} total={audit['total']}",
          file=sys.stderr)
    return 0


def export_embeddings(params: Parameters, vocab: Vocabulary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for i, tok in enumerate(vocab.itos):
            f.write(tok + "\t" + " ".join(f"{x:.9g}" for x in params.psi[i]) + "\n")


def import_embeddings(path: str | Path) -> tuple[Vocabulary, np.ndarray]:
    toks, rows = [], []
    with open(path, encoding="utf-8") as f:
        for line in f:
            tok, _, vec = line.rstrip("\n").partition("\t")
            toks.append(tok)
            rows.append(np.array(vec.split(), dtype=np.float32))
    return Vocabulary(toks), np.stack(rows)


def cmd_export(args) -> int:
    params, vocab = load_model(args.model)
    if args.format == "tsv":
        if not args.out:
            raise CLIError("--out is required for tsv export")
        export_embeddings(params, vocab, args.out)
        return 0
    if not args.corpus:
        raise CLIError("graph-json export needs --corpus to induce a graph over")
    structure = args.structure
    seqs = load_corpus(args.corpus, vocab)
    batch = Batch(list(seqs[:args.batch_size]))
    graph = Model(params).induce(batch, structure)
    text = graph.dumps()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="banyan", description="Entangled-tree representation learning.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model on a corpus")
    t.add_argument("--corpus", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--vocab", help="existing vocab TSV (required with --ids)")
    t.add_argument("--ids", action="store_true", help="corpus holds space-separated token ids")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="zero-shot similarity evaluation")
    e.add_argument("--model", required=True, help="run directory or model.bnyn path")
    e.add_argument("--data", required=True, help="TSV text_a<TAB>text_b<TAB>score")
    e.add_argument("--task", choices=["word", "sentence"], default="sentence")
    e.add_argument("--pool", choices=["root", "mean-nodes"], default="root")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="entangled vs sentential node growth")
    b.add_argument("--corpus", required=True)
    b.add_argument("--batch-sizes", default="32,64,128,256,512")
    b.add_argument("--model")
    b.add_argument("--config")
    b.add_argument("--seed", type=int)
    b.add_argument("--out", help="CSV path; a gnuplot .dat is written alongside")
    b.set_defaults(func=cmd_bench)

    x = sub.add_parser("export", help="export embeddings or an induced graph")
    x.add_argument("--model", required=True)
    x.add_argument("--format", choices=["tsv", "graph-json"], default="tsv")
    x.add_argument("--corpus")
    x.add_argument("--batch-size", type=int, default=32)
    x.add_argument("--structure", choices=["entangled", "sentential"], default="entangled")
    x.add_argument("--out")
    x.set_defaults(func=cmd_export)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with _threads():
            return args.func(args)
    except (CLIError, ConfigError, CorpusError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
