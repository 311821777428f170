"""Ranking users' test items by predicted preference and scoring with NDCG."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .dataset import SplitPair
from .embeddings.table import EmbeddingTable
from .errors import EmptySplitError, ParseError
from .neural import TowerNetworkParams, predict_preference
from .user_repr import UserVectorTable

log = logging.getLogger(__name__)

DENOMINATORS = ("standard", "paper")

# scorer(user, item_indices) -> predicted preference per item
Scorer = Callable[[int, np.ndarray], np.ndarray]


def _discounts(length: int, denominator: str) -> np.ndarray:
    positions = np.arange(1, length + 1, dtype=np.float64)
    if denominator == "standard":
        return np.log2(positions + 1.0)
    if denominator == "paper":
        return np.log2(positions) + 1.0
    raise ValueError(f"denominator must be one of {DENOMINATORS}, got {denominator!r}")


def dcg_at_n(ratings, n: int, denominator: str = "standard") -> float:
    gains = np.asarray(ratings, dtype=np.float64)[:n]
    return float(np.sum((2.0 ** gains - 1.0) / _discounts(len(gains), denominator)))


def ndcg_at_n(ratings_in_predicted_order, n: int, denominator: str = "standard") -> float:
    """NDCG of the first ``min(n, len)`` positions with gains ``2**r - 1``.

    The ideal DCG sorts the same ratings descending. An all-zero-gain list
    has no ideal DCG to normalise by and scores 1.0.
    """
    if n < 1:
        raise ValueError(f"cutoff n must be >= 1, got {n}")
    ratings = np.asarray(ratings_in_predicted_order, dtype=np.float64)
    if ratings.size == 0:
        raise ValueError("ndcg_at_n needs at least one rating")
    ideal = dcg_at_n(np.sort(ratings)[::-1], n, denominator)
    if ideal == 0.0:
        return 1.0
    return dcg_at_n(ratings, n, denominator) / ideal


@dataclass(frozen=True)
class RankedList:
    user: int
    items: np.ndarray  # dense item indices, best first
    ratings: np.ndarray  # true ratings aligned with ``items``
    scores: np.ndarray
    skipped: tuple[int, ...] = ()  # cold items left out

    def __len__(self) -> int:
        return len(self.items)


def order_by_score(items: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Permutation sorting by score descending, ties by ascending item index."""
    return np.lexsort((items, -np.asarray(scores, dtype=np.float64)))


def rank_items(user: int, items, ratings, scores, skipped=()) -> RankedList:
    items = np.asarray(items, dtype=np.int64)
    ratings = np.asarray(ratings)
    scores = np.asarray(scores, dtype=np.float64)
    order = order_by_score(items, scores)
    return RankedList(user, items[order], ratings[order], scores[order], tuple(skipped))


def rank_test_items(model: TowerNetworkParams, user: int, user_vec: np.ndarray,
                    test_items: Sequence[tuple[int, int]], items: EmbeddingTable,
                    item_ids: Sequence[str]) -> RankedList:
    """Rank one user's ``(item index, rating)`` test pairs by predicted preference.

    Items without an embedding are skipped and reported in ``skipped``.
    """
    known, ratings, rows, skipped = [], [], [], []
    index = items.index
    for item, rating in test_items:
        row = index.get(item_ids[item])
        if row is None:
            skipped.append(item)
            continue
        known.append(item)
        ratings.append(rating)
        rows.append(row)
    if skipped:
        log.debug("user %d: skipped %d cold items", user, len(skipped))
    if not known:
        return RankedList(user, np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0), tuple(skipped))
    item_vecs = items.vectors[np.asarray(rows)].astype(np.float64)
    user_vecs = np.broadcast_to(np.asarray(user_vec, dtype=np.float64), item_vecs.shape)
    scores = np.atleast_1d(predict_preference(model, user_vecs, item_vecs))
    return rank_items(user, known, ratings, scores, skipped)


def model_scorer(model: TowerNetworkParams, users: UserVectorTable, items: EmbeddingTable,
                 item_ids: Sequence[str]) -> Scorer:
    rows_of = np.asarray([items.index.get(t, -1) for t in item_ids], dtype=np.int64)
    item_vectors = items.vectors.astype(np.float64)

    def score(user: int, item_indices: np.ndarray) -> np.ndarray:
        vecs = item_vectors[rows_of[item_indices]]
        user_vecs = np.broadcast_to(users[user], vecs.shape)
        return np.atleast_1d(predict_preference(model, user_vecs, vecs))

    return score


def zero_scorer(user: int, item_indices: np.ndarray) -> np.ndarray:
    """Predicts preference 0 everywhere; the ranking falls back to item index."""
    return np.zeros(len(item_indices))


@dataclass
class RunResult:
    """Per-user NDCG values of one evaluated model."""

    cutoffs: tuple[int, ...]
    per_user: dict[int, dict[int, float]]  # cutoff -> user -> ndcg
    users_evaluated: int
    cold_items: int
    seed: int | None = None

    def mean(self, n: int) -> float:
        values = list(self.per_user[n].values())
        return float(np.mean(values))


def evaluate_scorer(split: SplitPair, scorer: Scorer, cutoffs: Iterable[int] = (5, 10),
                    known_items: set[int] | None = None, denominator: str = "standard",
                    seed: int | None = None) -> RunResult:
    """NDCG@n for every test user, ranking only that user's test items.

    ``known_items`` (dense indices) restricts ranking to items that have an
    embedding; the rest count as cold and are dropped. Users are visited in
    ascending index so means reduce in a fixed order.
    """
    cutoffs = tuple(int(n) for n in cutoffs)
    if not cutoffs or min(cutoffs) < 1:
        raise ValueError("cutoffs must be positive integers")
    if not len(split.test):
        raise EmptySplitError("test split is empty")
    per_user: dict[int, dict[int, float]] = {n: {} for n in cutoffs}
    cold = 0
    for user, items, ratings in split.test.profiles():
        if known_items is not None:
            keep = np.fromiter((i in known_items for i in items.tolist()), bool, len(items))
            cold += int((~keep).sum())
            items, ratings = items[keep], ratings[keep]
        if not len(items):
            continue
        ranked = rank_items(user, items, ratings, scorer(user, items))
        for n in cutoffs:
            per_user[n][user] = ndcg_at_n(ranked.ratings, n, denominator)
    evaluated = len(per_user[cutoffs[0]])
    if evaluated == 0:
        raise EmptySplitError("no test user has an item with a known embedding")
    return RunResult(cutoffs, per_user, evaluated, cold, seed)


def evaluate(model: TowerNetworkParams | Scorer, split: SplitPair, items: EmbeddingTable,
             users: UserVectorTable | None = None, cutoffs: Iterable[int] = (5, 10),
             denominator: str = "standard", seed: int | None = None) -> RunResult:
    """Evaluate a trained network (or any scorer) on ``split.test``."""
    item_ids = split.test.item_ids
    known = {k for k, t in enumerate(item_ids) if t in items.index}
    if isinstance(model, TowerNetworkParams):
        if users is None:
            raise ValueError("evaluating a network needs the user vector table")
        scorer = model_scorer(model, users, items, item_ids)
    else:
        scorer = model
    return evaluate_scorer(split, scorer, cutoffs, known, denominator, seed)


@dataclass
class ReportRow:
    method: str
    upl: int
    cutoff: int
    mean: float
    std: float
    runs: tuple[float, ...]


@dataclass
class EvalReport:
    rows: list[ReportRow] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)

    def get(self, method: str, upl: int, cutoff: int) -> ReportRow:
        for row in self.rows:
            if (row.method, row.upl, row.cutoff) == (method, upl, cutoff):
                return row
        raise KeyError((method, upl, cutoff))

    def add_runs(self, method: str, upl: int, results: Sequence[RunResult]) -> None:
        """Aggregate run means into rows: mean and sample std over runs."""
        if not results:
            raise ValueError("no runs to aggregate")
        for n in results[0].cutoffs:
            self.add_means(method, upl, n, [r.mean(n) for r in results])

    def add_means(self, method: str, upl: int, cutoff: int, means: Sequence[float]) -> ReportRow:
        means = tuple(float(m) for m in means)
        std = float(np.std(means, ddof=1)) if len(means) > 1 else 0.0
        row = ReportRow(method, upl, cutoff, float(np.mean(means)), std, means)
        self.rows.append(row)
        return row

    def format(self) -> str:
        lines = ["# rexnet evaluation report"]
        for key, value in self.metadata.items():
            lines.append(f"meta.{key} = {value}")
        for row in self.rows:
            prefix = f"{row.method}.upl{row.upl}.ndcg@{row.cutoff}"
            lines.append(f"{prefix}.mean = {row.mean:.6f}")
            lines.append(f"{prefix}.std = {row.std:.6f}")
            lines.append(f"{prefix}.runs = {','.join(f'{x:.6f}' for x in row.runs)}")
        lines.append("")
        lines.extend("# " + line for line in self.table().splitlines())
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        """Aligned human-readable table: one row per method/UPL, one column per cutoff."""
        cutoffs = sorted({r.cutoff for r in self.rows})
        keys = list(dict.fromkeys((r.method, r.upl) for r in self.rows))
        header = ["method", "UPL"] + [f"NDCG@{n}" for n in cutoffs]
        body = []
        for method, upl in keys:
            cells = [method, str(upl)]
            for n in cutoffs:
                try:
                    row = self.get(method, upl, n)
                    cells.append(f"{row.mean:.3f} ± {row.std:.3f}")
                except KeyError:
                    cells.append("-")
            body.append(cells)
        widths = [max(len(line[k]) for line in [header] + body) for k in range(len(header))]
        fmt = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
        return "\n".join([fmt(header), fmt(["-" * w for w in widths])] + [fmt(c) for c in body])


def parse_report(text: str) -> EvalReport:
    """Read the key/value part of :meth:`EvalReport.format` back."""
    report = EvalReport()
    values: dict[tuple[str, int, int], dict[str, str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise ParseError("expected 'key = value'", lineno)
        if key.startswith("meta."):
            report.metadata[key[5:]] = value
            continue
        try:
            method, upl, metric, stat = key.rsplit(".", 3)
            cutoff = int(metric.split("@")[1])
            row_key = (method, int(upl.removeprefix("upl")), cutoff)
        except (ValueError, IndexError):
            raise ParseError(f"unrecognised key {key!r}", lineno) from None
        values.setdefault(row_key, {})[stat] = value
    for (method, upl, cutoff), stats in values.items():
        runs = tuple(float(x) for x in stats.get("runs", "").split(",") if x)
        report.rows.append(ReportRow(method, upl, cutoff, float(stats["mean"]),
                                     float(stats.get("std", 0.0)), runs))
    return report


def save_report(report: EvalReport, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.format())


def load_report(path: str | os.PathLike) -> EvalReport:
    with open(path, encoding="utf-8") as fh:
        return parse_report(fh.read())
