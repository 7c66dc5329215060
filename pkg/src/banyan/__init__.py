"""Entangled-tree structure induction and representation learning."""

from .corpus import Batch, TokenSequence, Vocabulary, build_vocab, iter_batches, tokenize
from .model import Model, Parameters, init_params, load_checkpoint, save_checkpoint
from .structure import EntangledGraph, count_nodes, induce_entangled, induce_sentential
from .training import TrainConfig, train

__all__ = [
    "Batch", "TokenSequence", "Vocabulary", "build_vocab", "iter_batches", "tokenize",
    "Model", "Parameters", "init_params", "load_checkpoint", "save_checkpoint",
    "EntangledGraph", "count_nodes", "induce_entangled", "induce_sentential",
    "TrainConfig", "train",
]
