"""Item embeddings learned from rating sentences (SGNS or GloVe)."""

from ..corpus import Corpus
from .config import EmbeddingConfig
from .cooccurrence import CooccurrenceMatrix, build_cooccurrence, write_cooccurrence
from .glove import (
    glove_cost,
    glove_entry_gradients,
    glove_entry_loss,
    glove_step,
    glove_weight,
    train_glove,
)
from .sgns import (
    NoiseDistribution,
    draw_negative,
    sgns_pair_gradients,
    sgns_pair_objective,
    train_sgns,
)
from .table import EmbeddingTable, GloveBiases, load_embeddings, save_embeddings


def train_embeddings(corpus: Corpus, config: EmbeddingConfig) -> EmbeddingTable:
    if config.method == "sgns":
        return train_sgns(corpus, config)
    return train_glove(build_cooccurrence(corpus, config.window), config)


__all__ = [
    "CooccurrenceMatrix",
    "EmbeddingConfig",
    "EmbeddingTable",
    "GloveBiases",
    "NoiseDistribution",
    "build_cooccurrence",
    "draw_negative",
    "glove_cost",
    "glove_entry_gradients",
    "glove_entry_loss",
    "glove_step",
    "glove_weight",
    "load_embeddings",
    "save_embeddings",
    "sgns_pair_gradients",
    "sgns_pair_objective",
    "train_embeddings",
    "train_glove",
    "train_sgns",
    "write_cooccurrence",
]
