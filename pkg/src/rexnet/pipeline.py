"""In-process glue between the stages; the CLI drives the same functions."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Iterable, Mapping

import numpy as np

from .corpus import build_corpus, shuffle_corpus
from .dataset import RatingDataset, SplitPair, split_by_upl, user_average
from .embeddings import EmbeddingConfig, EmbeddingTable, train_embeddings
from .evaluation import RunResult, evaluate
from .neural import ExampleSet, NetworkConfig, TowerNetworkParams, init_network, train
from .user_repr import UserVectorTable, derive_user_vectors

log = logging.getLogger(__name__)


def assemble_examples(train_set: RatingDataset, averages: Mapping[int, float],
                      users: UserVectorTable, items: EmbeddingTable) -> ExampleSet:
    """One example per train triple: (user vector, item vector, rating - user mean)."""
    item_rows = items.rows(train_set.item_ids[i] for i in train_set.items.tolist())
    user_rows = np.asarray([users._row[u] for u in train_set.users.tolist()], dtype=np.int64)
    means = np.asarray([averages[u] for u in train_set.users.tolist()])
    return ExampleSet(users.vectors[user_rows].astype(np.float64),
                      items.vectors[item_rows].astype(np.float64),
                      train_set.ratings.astype(np.float64) - means)


def learn_item_embeddings(train_set: RatingDataset, config: EmbeddingConfig) -> EmbeddingTable:
    corpus = shuffle_corpus(build_corpus(train_set), config.seed)
    return train_embeddings(corpus, config)


def fit_network(train_set: RatingDataset, items: EmbeddingTable, config: NetworkConfig,
                normalize: str = "none") -> tuple[TowerNetworkParams, list[float], UserVectorTable]:
    averages = user_average(train_set)
    users = derive_user_vectors(train_set, averages, items, normalize)
    examples = assemble_examples(train_set, averages, users, items)
    config = replace(config, input_dim=items.dim)
    params, trace = train(init_network(config), examples, config)
    return params, trace, users


@dataclass
class PipelineRun:
    split: SplitPair
    items: EmbeddingTable
    users: UserVectorTable
    params: TowerNetworkParams
    network_trace: list[float]
    result: RunResult


def run_pipeline(dataset: RatingDataset, upl: int, seed: int,
                 embedding: EmbeddingConfig = EmbeddingConfig(),
                 network: NetworkConfig = NetworkConfig(),
                 cutoffs: Iterable[int] = (5, 10), denominator: str = "standard",
                 normalize: str = "none") -> PipelineRun:
    """Split, embed, train and evaluate with every stage seeded by ``seed``."""
    split = split_by_upl(dataset, upl, seed)
    embedding = replace(embedding, seed=seed)
    network = replace(network, seed=seed)
    items = learn_item_embeddings(split.train, embedding)
    params, trace, users = fit_network(split.train, items, network, normalize)
    result = evaluate(params, split, items, users, cutoffs, denominator, seed)
    return PipelineRun(split, items, users, params, trace, result)
