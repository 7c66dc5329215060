"""Reverse-mode gradients through a fixed induced graph, dropout, Adam and the epoch loop."""

from __future__ import annotations

import csv
import logging
import os
import time
import typing
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import DEFAULT_BATCH_SIZE, DEFAULT_MAX_LEN, Batch, TokenSequence, iter_batches
from .model import ForwardTrace, Masks, Model, Parameters, compose_vjp, decompose_vjp, forward, init_params, save_checkpoint
from .objectives import DEFAULT_TAU, contrastive_loss, cross_entropy_loss
from .structure import EntangledGraph, sentential_node_count

log = logging.getLogger(__name__)

DEFAULT_LR = {"ce": 1e-3, "contrastive": 1e-4}
METRIC_COLUMNS = ["epoch", "step", "loss", "recon_acc", "nodes_entangled", "nodes_sentential_equiv", "wall_ms"]


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    objective: str = "ce"
    structure: str = "entangled"
    functions: str = "diag"
    lr: float | None = None
    batch_size: int = DEFAULT_BATCH_SIZE
    epochs: int = 15
    dropout_embed: float = 0.2
    dropout_fn: float = 0.1
    tau: float = DEFAULT_TAU
    init_range: float = 0.1
    seed: int = 0
    max_len: int = DEFAULT_MAX_LEN
    U: int = 2
    K: int = 128
    min_count: int = 1
    ce_weighting: str = "unique"
    clip_norm: float = 0.0
    timing: bool = False

    def __post_init__(self):
        if self.objective not in DEFAULT_LR:
            raise ConfigError(f"objective must be one of {sorted(DEFAULT_LR)}")
        if self.structure not in ("entangled", "sentential"):
            raise ConfigError("structure must be entangled or sentential")
        if self.functions not in ("diag", "dense"):
            raise ConfigError("functions must be diag or dense")
        if self.lr is None:
            self.lr = DEFAULT_LR[self.objective]
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        for name in ("dropout_embed", "dropout_fn"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")
        if self.tau <= 0:
            raise ConfigError("tau must be > 0")
        if self.batch_size < 1 or self.epochs < 0 or self.U < 1 or self.K < 1 or self.max_len < 1:
            raise ConfigError("batch_size, U, K, max_len must be >= 1 and epochs >= 0")
        if self.ce_weighting not in ("unique", "occurrence"):
            raise ConfigError("ce_weighting must be unique or occurrence")

    @classmethod
    def from_dict(cls, values: dict[str, str]) -> "TrainConfig":
        hints = typing.get_type_hints(cls)
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw, hints[key])
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        values = {}
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                key, sep, value = line.partition("=")
                if not sep:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                values[key.strip()] = value.strip()
        return cls.from_dict(values)

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


def _coerce(key: str, raw, hint):
    if not isinstance(raw, str):
        return raw
    if hint is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    base = [t for t in typing.get_args(hint) if t is not type(None)] or [hint]
    try:
        if float in base:
            return float(raw)
        if int in base:
            return int(raw)
    except ValueError as e:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from e
    return raw


# ---------------------------------------------------------------------------
# dropout

def apply_dropout(x: np.ndarray, rate: float, rng: np.random.Generator, training: bool = True):
    """Inverted dropout. Returns (output, mask)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if not training or rate == 0.0:
        mask = np.ones_like(x)
        return x, mask
    mask = ((rng.random(x.shape) >= rate) / (1.0 - rate)).astype(x.dtype)
    return x * mask, mask


def make_masks(graph: EntangledGraph, params: Parameters, rate_embed: float, rate_fn: float,
               rng: np.random.Generator) -> Masks:
    K, U, dt = params.K, params.U, params.dtype
    M = len(graph)
    masks = Masks()
    if rate_embed > 0:
        _, masks.leaf = apply_dropout(np.ones((len(graph.leaves), K, U), dt), rate_embed, rng)
    if rate_fn > 0:
        _, masks.comp = apply_dropout(np.ones((M, K, U), dt), rate_fn, rng)
        _, masks.dec = apply_dropout(np.ones((M, 2, K, U), dt), rate_fn, rng)
    return masks


# ---------------------------------------------------------------------------
# gradients

def backward(trace: ForwardTrace, grad_up: np.ndarray | None, grad_down: np.ndarray | None,
             grad_gamma: np.ndarray | None = None) -> Parameters:
    """Propagate loss gradients on node embeddings back to every parameter.

    The graph is a constant: merge decisions get no gradient.
    """
    if trace is None:
        raise ValueError("missing forward trace")
    g, p, masks = trace.graph, trace.params.astype(np.float64), trace.masks
    grads = p.zeros_like()
    M = len(g)
    g_up = np.zeros((M, p.K, p.U)) if grad_up is None else np.array(grad_up, dtype=np.float64)
    g_down = np.zeros((M, p.K, p.U)) if grad_down is None else np.array(grad_down, dtype=np.float64)
    g_msg = np.zeros((M, 2, p.K, p.U))
    up = trace.up.astype(np.float64)
    down = trace.down.astype(np.float64)
    w, rw = g.context_weight, g.root_weight
    internal = g.left >= 0

    for nodes, edges in reversed(g.down_levels):
        emit = nodes[internal[nodes]]
        if emit.size:
            gm = g_msg[emit]
            if masks.dec is not None:
                gm = gm * masks.dec[emit]
            g_parent, pg = decompose_vjp(p, down[emit], gm[:, 0], gm[:, 1])
            g_down[emit] += g_parent
            for k, v in pg.items():
                grads[k] += v
        g_up[nodes] += rw[nodes, None, None] * g_down[nodes]
        if edges.size:
            contrib = w[edges, None, None] * g_down[g.ctx_child[edges]]
            np.add.at(g_msg, (g.ctx_parent[edges], g.ctx_side[edges]), contrib)

    for level in reversed(g.up_levels):
        gl = g_up[level]
        if masks.comp is not None:
            gl = gl * masks.comp[level]
        lc, rc = g.left[level], g.right[level]
        g_left, g_right, pg = compose_vjp(p, up[lc], up[rc], gl)
        np.add.at(g_up, lc, g_left)
        np.add.at(g_up, rc, g_right)
        for k, v in pg.items():
            grads[k] += v

    leaves = g.leaves
    gleaf = g_up[leaves]
    if masks.leaf is not None:
        gleaf = gleaf * masks.leaf
    np.add.at(grads.psi, g.token[leaves], gleaf.reshape(len(leaves), p.D))
    if grad_gamma is not None:
        grads.gamma += grad_gamma
    return grads


@dataclass
class StepResult:
    loss: float
    recon_acc: float
    grads: Parameters | None
    trace: ForwardTrace


def loss_and_grads(graph: EntangledGraph, params: Parameters, masks: Masks | None, objective: str,
                   tau: float = DEFAULT_TAU, ce_weighting: str = "unique", with_grad: bool = True) -> StepResult:
    trace = forward(graph, params, masks)
    ce = cross_entropy_loss(graph, trace.down, params, ce_weighting, with_grad=with_grad and objective == "ce")
    if objective == "ce":
        grads = backward(trace, None, ce.grad_down, ce.grad_gamma) if with_grad else None
        return StepResult(ce.loss, ce.accuracy, grads, trace)
    co = contrastive_loss(trace.up, trace.down, tau, with_grad=with_grad)
    grads = backward(trace, co.grad_up, co.grad_down) if with_grad else None
    return StepResult(co.loss, ce.accuracy, grads, trace)


def global_norm(grads: Parameters) -> float:
    return float(np.sqrt(sum(float(np.sum(a.astype(np.float64) ** 2)) for _, a in grads.named())))


def clip_by_global_norm(grads: Parameters, max_norm: float) -> Parameters:
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for name, arr in grads.named():
            grads[name] = arr * scale
    return grads


# ---------------------------------------------------------------------------
# optimiser

class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Parameters, grads: Parameters, lr: float | None = None) -> Parameters:
        """Update ``params`` in place with bias-corrected Adam."""
        lr = self.lr if lr is None else lr
        for name, g in grads.named():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {name}; step aborted")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.named():
            g = g.astype(np.float64)
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p = params[name]
            params[name] = (p.astype(np.float64) - update).astype(p.dtype)
        return params


def adam_step(params: Parameters, grads: Parameters, state: Adam, lr: float | None = None) -> Parameters:
    return state.step(params, grads, lr)


# ---------------------------------------------------------------------------
# epoch loop

@dataclass
class TrainResult:
    params: Parameters
    metrics: list[dict]


def _write_atomic(path: Path, write: Callable[[Path], None]) -> None:
    tmp = path.with_name(path.name + ".tmp")
    write(tmp)
    os.replace(tmp, path)


def _write_metrics(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({**r, "loss": f"{r['loss']:.8g}", "recon_acc": f"{r['recon_acc']:.6f}"})


def train(config: TrainConfig, sequences: Sequence[TokenSequence], vocab_size: int,
          out_dir: str | Path | None = None, params: Parameters | None = None,
          on_epoch: Callable[[int, list[dict]], None] | None = None) -> TrainResult:
    """Seeded epoch loop; structure is re-induced from live parameters every step.

    Writes ``model.bnyn`` and ``metrics.csv`` to ``out_dir`` after every epoch.
    A non-finite loss raises :class:`TrainingDiverged` and leaves the last
    good checkpoint in place.
    """
    if params is None:
        params = init_params(vocab_size, config.U, config.K, config.functions, config.init_range, config.seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([config.seed, 1])
    opt = Adam(config.lr)
    model = Model(params)
    rows: list[dict] = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        epoch_rows = []
        for batch in iter_batches(sequences, config.batch_size, config.seed, epoch):
            t0 = time.perf_counter()
            model.params = params
            graph = model.induce(batch, config.structure)
            masks = make_masks(graph, params, config.dropout_embed, config.dropout_fn, rng)
            res = loss_and_grads(graph, params, masks, config.objective, config.tau, config.ce_weighting)
            if not np.isfinite(res.loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} step {step}")
            grads = clip_by_global_norm(res.grads, config.clip_norm)
            try:
                opt.step(params, grads)
            except FloatingPointError as e:
                raise TrainingDiverged(str(e)) from e
            step += 1
            row = {
                "epoch": epoch,
                "step": step,
                "loss": res.loss,
                "recon_acc": res.recon_acc,
                "nodes_entangled": len(set(graph.signatures)),
                "nodes_sentential_equiv": sentential_node_count(batch),
                "wall_ms": round((time.perf_counter() - t0) * 1000) if config.timing else 0,
            }
            rows.append(row)
            epoch_rows.append(row)
        mean_loss = float(np.mean([r["loss"] for r in epoch_rows])) if epoch_rows else float("nan")
        log.info("epoch %d loss %.5f recon_acc %.4f", epoch, mean_loss,
                 np.mean([r["recon_acc"] for r in epoch_rows]) if epoch_rows else float("nan"))
        if out is not None:
            _write_atomic(out / "model.bnyn", lambda p: save_checkpoint(p, params))
            _write_atomic(out / "metrics.csv", lambda p: _write_metrics(p, rows))
        if on_epoch is not None:
            on_epoch(epoch, epoch_rows)
    return TrainResult(params, rows)


def epoch_summary(rows: list[dict]) -> dict[int, dict[str, float]]:
    out: dict[int, dict[str, float]] = {}
    for epoch in sorted({r["epoch"] for r in rows}):
        sel = [r for r in rows if r["epoch"] == epoch]
        out[epoch] = {
            "loss": float(np.mean([r["loss"] for r in sel])),
            "recon_acc": float(np.mean([r["recon_acc"] for r in sel])),
        }
    return out


def evaluate_batch(params: Parameters, batch: Batch, config: TrainConfig) -> StepResult:
    """Mask-free forward of one batch (eval mode)."""
    graph = Model(params).induce(batch, config.structure)
    return loss_and_grads(graph, params, None, config.objective, config.tau, config.ce_weighting, with_grad=False)
