"""User vectors as rating-deviation-weighted sums of item vectors."""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping

import numpy as np

from .dataset import RatingDataset
from .embeddings.table import EmbeddingTable, read_vectors, write_meta, write_vectors
from .errors import MissingEmbeddingError


@dataclass(frozen=True, eq=False)
class UserVectorTable:
    users: np.ndarray  # dense user indices, ascending
    vectors: np.ndarray  # float64, one row per entry of ``users``
    user_ids: tuple[str, ...]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.users)

    @cached_property
    def _row(self) -> dict[int, int]:
        return {u: k for k, u in enumerate(self.users.tolist())}

    def __contains__(self, user: int) -> bool:
        return user in self._row

    def __getitem__(self, user: int) -> np.ndarray:
        return self.vectors[self._row[user]]

    def by_id(self, user_id: str) -> np.ndarray:
        return self[self.user_ids.index(user_id)]


def derive_user_vectors(train: RatingDataset, averages: Mapping[int, float],
                        items: EmbeddingTable, normalize: str = "none") -> UserVectorTable:
    """``u = sum_k (r_k - mean_rating) * v_k`` over each user's train items.

    Sums run in float64 in the profile's source order. ``normalize="count"``
    divides by the profile length (ablation only).

    Raises:
        MissingEmbeddingError: a train item has no row in ``items``.
    """
    if normalize not in ("none", "count"):
        raise ValueError("normalize must be 'none' or 'count'")
    item_vectors = items.vectors.astype(np.float64)
    rows_of = np.full(len(train.item_ids), -1, np.int64)
    index = items.index
    for k, token in enumerate(train.item_ids):
        rows_of[k] = index.get(token, -1)
    users = []
    vectors = []
    for user, user_items, ratings in train.profiles():
        rows = rows_of[user_items]
        if (rows < 0).any():
            raise MissingEmbeddingError(train.item_ids[user_items[np.argmin(rows)]])
        coef = ratings.astype(np.float64) - averages[user]
        vec = np.zeros(items.dim)
        for c, r in zip(coef, rows):
            vec += c * item_vectors[r]
        if normalize == "count":
            vec /= len(rows)
        users.append(user)
        vectors.append(vec)
    return UserVectorTable(np.asarray(users, np.int64),
                           np.asarray(vectors).reshape(len(users), items.dim), train.user_ids)


def save_user_vectors(table: UserVectorTable, path: str | os.PathLike, meta: dict | None = None) -> None:
    tokens = [table.user_ids[u] for u in table.users.tolist()]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_vectors(tokens, table.vectors, fh)
    if meta:
        write_meta(os.fspath(path) + ".meta", meta)


def load_user_vectors(path: str | os.PathLike, user_ids: tuple[str, ...]) -> UserVectorTable:
    """Read a user vector file; ids are resolved against ``user_ids``."""
    with open(path, encoding="utf-8") as fh:
        tokens, vectors = read_vectors(fh, np.float64, source=os.fspath(path))
    lookup = {u: k for k, u in enumerate(user_ids)}
    users = np.asarray([lookup[t] for t in tokens], np.int64)
    order = np.argsort(users)
    return UserVectorTable(users[order], vectors[order], tuple(user_ids))
