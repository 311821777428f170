from __future__ import annotations

from dataclasses import dataclass
from typing import IO

import numpy as np

from ..corpus import Corpus


@dataclass(frozen=True, eq=False)
class CooccurrenceMatrix:
    """Sparse symmetric co-occurrence counts over vocabulary rows.

    Only nonzero entries are stored, sorted by ``(row, col)``.
    """

    rows: np.ndarray
    cols: np.ndarray
    counts: np.ndarray
    tokens: tuple[str, ...]

    @property
    def vocab_size(self) -> int:
        return len(self.tokens)

    @property
    def nnz(self) -> int:
        return len(self.counts)

    def __len__(self) -> int:
        return self.nnz

    def get(self, i: int, j: int) -> float:
        key = i * self.vocab_size + j
        keys = self.rows * self.vocab_size + self.cols
        k = np.searchsorted(keys, key)
        if k < len(keys) and keys[k] == key:
            return float(self.counts[k])
        return 0.0

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.vocab_size, self.vocab_size))
        dense[self.rows, self.cols] = self.counts
        return dense

    def to_dict(self) -> dict[tuple[str, str], float]:
        t = self.tokens
        return {(t[i], t[j]): float(c) for i, j, c in zip(self.rows.tolist(), self.cols.tolist(), self.counts)}


def build_cooccurrence(corpus: Corpus, window: int) -> CooccurrenceMatrix:
    """Count unweighted co-occurrences within ``window`` positions.

    Each position looks ``1..window`` tokens to either side inside its own
    sentence and adds 1 to ``X[token, neighbour]``; the matrix is therefore
    symmetric, and a repeated item at two positions contributes to its own
    diagonal entry.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    tokens, offsets = corpus.encoded()
    v = corpus.vocab_size
    sentence_of = np.repeat(np.arange(len(offsets) - 1), np.diff(offsets))
    keys = []
    for d in range(1, window + 1):
        if d >= len(tokens):
            break
        same = sentence_of[:-d] == sentence_of[d:]
        if not same.any():
            continue
        left, right = tokens[:-d][same], tokens[d:][same]
        keys.append(left * v + right)
        keys.append(right * v + left)
    if not keys:
        empty = np.empty(0, np.int64)
        return CooccurrenceMatrix(empty, empty, np.empty(0), corpus.vocab_tokens)
    uniq, counts = np.unique(np.concatenate(keys), return_counts=True)
    return CooccurrenceMatrix(uniq // v, uniq % v, counts.astype(np.float64), corpus.vocab_tokens)


def write_cooccurrence(cooc: CooccurrenceMatrix, stream: IO[str]) -> None:
    t = cooc.tokens
    for i, j, c in zip(cooc.rows.tolist(), cooc.cols.tolist(), cooc.counts.tolist()):
        stream.write(f"{t[i]} {t[j]} {c:g}\n")
