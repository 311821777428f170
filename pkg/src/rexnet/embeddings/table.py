"""Item embedding tables and their text interchange format.

File layout::

    <vocab_size> <dim>
    <token> <v_1> ... <v_dim>

Floats are written in the shortest decimal form that reads back to the
identical value, so a write/read cycle is bit-exact.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import IO, Iterable, Sequence

import numpy as np

from ..errors import MissingEmbeddingError, ParseError, ValidationError


@dataclass(frozen=True)
class GloveBiases:
    b: np.ndarray
    b_tilde: np.ndarray


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """Token -> vector map.

    ``vectors`` is what downstream stages consume. Freshly trained tables also
    keep the raw ``input_vectors`` and ``output_vectors`` (and GloVe biases);
    a table read from disk only has ``vectors``.
    """

    tokens: tuple[str, ...]
    vectors: np.ndarray
    input_vectors: np.ndarray | None = None
    output_vectors: np.ndarray | None = None
    biases: GloveBiases | None = None
    trace: tuple[float, ...] = ()
    method: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vectors = np.asarray(self.vectors)
        if vectors.ndim != 2 or vectors.shape[0] != len(self.tokens):
            raise ValidationError(
                f"vectors shape {vectors.shape} does not match {len(self.tokens)} tokens"
            )
        if len(set(self.tokens)) != len(self.tokens):
            raise ValidationError("duplicate tokens in embedding table")
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "vectors", vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: object) -> bool:
        return token in self.index

    def __getitem__(self, token: str) -> np.ndarray:
        try:
            return self.vectors[self.index[token]]
        except KeyError:
            raise MissingEmbeddingError(token) from None

    @cached_property
    def index(self) -> dict[str, int]:
        return {t: k for k, t in enumerate(self.tokens)}

    def rows(self, tokens: Iterable[str]) -> np.ndarray:
        """Row numbers of ``tokens``; raises naming the first unknown token."""
        index = self.index
        out = []
        for t in tokens:
            k = index.get(t)
            if k is None:
                raise MissingEmbeddingError(t)
            out.append(k)
        return np.asarray(out, dtype=np.int64)

    def lookup(self, tokens: Iterable[str]) -> np.ndarray:
        return self.vectors[self.rows(tokens)]

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.vectors).all())


def format_float(x) -> str:
    """Shortest round-trip decimal for a float32 or float64 scalar."""
    return np.format_float_positional(x, unique=True, trim="-") if abs(x) >= 1e-4 or x == 0 \
        else np.format_float_scientific(x, unique=True, trim="-")


def write_vectors(tokens: Sequence[str], vectors: np.ndarray, stream: IO[str]) -> None:
    vectors = np.asarray(vectors)
    stream.write(f"{len(tokens)} {vectors.shape[1]}\n")
    for token, row in zip(tokens, vectors):
        if any(c.isspace() for c in token):
            raise ValidationError(f"token {token!r} contains whitespace")
        stream.write(token)
        for x in row:
            stream.write(" ")
            stream.write(format_float(x))
        stream.write("\n")


def read_vectors(stream: IO[str], dtype=np.float32,
                 source: str | None = None) -> tuple[tuple[str, ...], np.ndarray]:
    header = stream.readline()
    parts = header.split()
    if len(parts) != 2:
        raise ParseError("header must be '<vocab_size> <dim>'", 1, source)
    try:
        size, dim = int(parts[0]), int(parts[1])
    except ValueError:
        raise ParseError("header must hold two integers", 1, source) from None
    if size < 0 or dim < 1:
        raise ParseError(f"invalid header sizes {size} {dim}", 1, source)
    tokens = []
    vectors = np.empty((size, dim), dtype=dtype)
    for k in range(size):
        lineno = k + 2
        line = stream.readline()
        if not line:
            raise ParseError(f"file ends after {k} of {size} vectors", lineno, source)
        fields = line.split()
        if len(fields) != dim + 1:
            raise ParseError(f"expected token plus {dim} values, got {len(fields)} fields", lineno, source)
        tokens.append(fields[0])
        try:
            vectors[k] = [float(x) for x in fields[1:]]
        except ValueError as exc:
            raise ParseError(f"bad number ({exc})", lineno, source) from None
    if stream.readline().strip():
        raise ParseError(f"more lines than the {size} declared", size + 2, source)
    if not np.isfinite(vectors).all():
        raise ParseError("non-finite value in table", None, source)
    return tuple(tokens), vectors


def write_meta(path: str | os.PathLike, meta: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in meta.items():
            fh.write(f"{key} = {value}\n")


def save_embeddings(table: EmbeddingTable, path: str | os.PathLike, meta: dict | None = None) -> None:
    """Write the table; ``meta`` (if any) goes to a ``<path>.meta`` sidecar."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_vectors(table.tokens, table.vectors, fh)
    if meta:
        write_meta(os.fspath(path) + ".meta", meta)


def load_embeddings(path: str | os.PathLike) -> EmbeddingTable:
    with open(path, encoding="utf-8") as fh:
        tokens, vectors = read_vectors(fh, np.float32, source=os.fspath(path))
    return EmbeddingTable(tokens, vectors)
