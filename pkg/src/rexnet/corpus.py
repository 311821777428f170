"""Rating profiles as sentences: each rated item repeated ``rating`` times."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import IO, Sequence

import numpy as np

from .dataset import RatingDataset


@dataclass(frozen=True)
class Sentence:
    owner: int
    tokens: np.ndarray  # dense item indices

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True, eq=False)
class Corpus:
    """One sentence per train user plus the item vocabulary.

    ``vocab_items`` lists the dense item indices that occur at least once,
    ascending; ``counts[k]`` is the total number of occurrences of
    ``vocab_items[k]`` across all sentences. ``item_ids`` is the dataset's id
    map, kept so tokens can be written back as external ids.
    """

    sentences: tuple[Sentence, ...]
    vocab_items: np.ndarray
    counts: np.ndarray
    item_ids: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.sentences)

    @property
    def total_tokens(self) -> int:
        return int(self.counts.sum())

    @property
    def vocab_size(self) -> int:
        return len(self.vocab_items)

    @property
    def vocabulary(self) -> dict[str, int]:
        return {self.item_ids[i]: int(c) for i, c in zip(self.vocab_items.tolist(), self.counts)}

    @property
    def vocab_tokens(self) -> tuple[str, ...]:
        return tuple(self.item_ids[i] for i in self.vocab_items.tolist())

    @cached_property
    def _row_of_item(self) -> np.ndarray:
        lookup = np.full(len(self.item_ids), -1, np.int64)
        lookup[self.vocab_items] = np.arange(len(self.vocab_items))
        return lookup

    def encoded(self) -> tuple[np.ndarray, np.ndarray]:
        """Flatten to ``(tokens, offsets)`` with tokens as vocabulary rows.

        Sentence ``s`` occupies ``tokens[offsets[s]:offsets[s + 1]]``.
        """
        lengths = np.fromiter((len(s) for s in self.sentences), np.int64, len(self.sentences))
        offsets = np.zeros(len(lengths) + 1, np.int64)
        np.cumsum(lengths, out=offsets[1:])
        if self.sentences:
            flat = np.concatenate([s.tokens for s in self.sentences])
        else:
            flat = np.empty(0, np.int64)
        return self._row_of_item[flat].astype(np.int64), offsets

    def with_sentences(self, sentences: Sequence[Sentence]) -> Corpus:
        return Corpus(tuple(sentences), self.vocab_items, self.counts, self.item_ids)


def build_corpus(train: RatingDataset) -> Corpus:
    """Turn each user's train profile into a sentence.

    Items are appended in the profile's source order and repeated as many
    times as their rating; a rating of 0 contributes no tokens.
    """
    if not len(train):
        raise ValueError("build_corpus needs a nonempty train set")
    sentences = []
    for user, items, ratings in train.profiles():
        tokens = np.repeat(items, ratings)
        tokens.flags.writeable = False
        sentences.append(Sentence(user, tokens))
    counts = np.bincount(train.items, weights=train.ratings, minlength=len(train.item_ids))
    vocab_items = np.flatnonzero(counts > 0)
    return Corpus(tuple(sentences), vocab_items, counts[vocab_items].astype(np.int64), train.item_ids)


def shuffle_corpus(corpus: Corpus, seed: int) -> Corpus:
    """Permute the tokens of every sentence independently.

    Sentence ``s`` is shuffled with a PCG64 stream seeded from
    ``(seed, owner)``, so the result does not depend on processing order.
    Sentence order and ownership are unchanged.
    """
    shuffled = []
    for sentence in corpus.sentences:
        rng = np.random.default_rng([seed, sentence.owner])
        tokens = rng.permutation(sentence.tokens)
        tokens.flags.writeable = False
        shuffled.append(Sentence(sentence.owner, tokens))
    return corpus.with_sentences(shuffled)


def epoch_seed(seed: int, epoch: int) -> int:
    """Derive a per-epoch shuffle seed from the run seed."""
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1, np.uint64)[0])


def write_corpus(corpus: Corpus, stream: IO[str]) -> None:
    """One line per sentence, external item ids separated by single spaces."""
    ids = corpus.item_ids
    for sentence in corpus.sentences:
        stream.write(" ".join(ids[i] for i in sentence.tokens.tolist()))
        stream.write("\n")
