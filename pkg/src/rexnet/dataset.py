"""MovieLens-style rating files, the sparse rating matrix and the UPL split.

External user/item ids are opaque strings and only live at the I/O boundary.
Inside the package everything is addressed by dense indices assigned in order
of first appearance, so all downstream arrays stay contiguous.
"""

from __future__ import annotations

import enum
import io
import os
from dataclasses import dataclass
from functools import cached_property
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .errors import EmptySplitError, ParseError, ValidationError

DEFAULT_SCALE = (1, 5)


class RatingFormat(str, enum.Enum):
    TAB_SEPARATED = "tab"
    DOUBLE_COLON = "double_colon"

    @property
    def separator(self) -> str:
        return "\t" if self is RatingFormat.TAB_SEPARATED else "::"

    @classmethod
    def from_name(cls, name: str | RatingFormat) -> RatingFormat:
        if isinstance(name, RatingFormat):
            return name
        aliases = {
            "tab": cls.TAB_SEPARATED,
            "tab_separated": cls.TAB_SEPARATED,
            "tsv": cls.TAB_SEPARATED,
            "ml-100k": cls.TAB_SEPARATED,
            "double_colon": cls.DOUBLE_COLON,
            "colon": cls.DOUBLE_COLON,
            "dat": cls.DOUBLE_COLON,
            "ml-1m": cls.DOUBLE_COLON,
        }
        try:
            return aliases[name.lower()]
        except KeyError:
            raise ValueError(f"unknown rating format {name!r}") from None


@dataclass(frozen=True)
class RatingTriple:
    user: str
    item: str
    rating: int


@dataclass(frozen=True, eq=False)
class RatingDataset:
    """Sparse set of (user, item, rating) triples.

    ``users``, ``items`` and ``ratings`` are parallel arrays in source order.
    ``user_ids[k]`` / ``item_ids[k]`` give the external id of dense index
    ``k``. Several datasets may share one id space (train and test of a
    split do), so an id can be known without having any triple here.
    """

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    scale: tuple[int, int] = DEFAULT_SCALE

    def __post_init__(self):
        users = np.ascontiguousarray(self.users, dtype=np.int64)
        items = np.ascontiguousarray(self.items, dtype=np.int64)
        ratings = np.ascontiguousarray(self.ratings, dtype=np.int64)
        if not (users.shape == items.shape == ratings.shape) or users.ndim != 1:
            raise ValidationError("users, items and ratings must be 1-d arrays of equal length")
        for arr in (users, items, ratings):
            arr.flags.writeable = False
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "ratings", ratings)
        object.__setattr__(self, "user_ids", tuple(self.user_ids))
        object.__setattr__(self, "item_ids", tuple(self.item_ids))
        lo, hi = self.scale
        if len(ratings) and (ratings.min() < lo or ratings.max() > hi):
            bad = int(np.flatnonzero((ratings < lo) | (ratings > hi))[0])
            raise ValidationError(
                f"rating {ratings[bad]} for user {self.user_ids[users[bad]]!r}, "
                f"item {self.item_ids[items[bad]]!r} outside scale {lo}..{hi}"
            )

    def __len__(self) -> int:
        return len(self.ratings)

    def __iter__(self) -> Iterator[RatingTriple]:
        for u, i, r in zip(self.users.tolist(), self.items.tolist(), self.ratings.tolist()):
            yield RatingTriple(self.user_ids[u], self.item_ids[i], r)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RatingDataset):
            return NotImplemented
        return self.as_set() == other.as_set() and self.scale == other.scale

    __hash__ = None  # type: ignore[assignment]

    def as_set(self) -> set[tuple[str, str, int]]:
        return {(t.user, t.item, t.rating) for t in self}

    @cached_property
    def user_to_index(self) -> dict[str, int]:
        return {u: k for k, u in enumerate(self.user_ids)}

    @cached_property
    def item_to_index(self) -> dict[str, int]:
        return {i: k for k, i in enumerate(self.item_ids)}

    @cached_property
    def _grouping(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        # Stable sort keeps each user's triples in source order.
        order = np.argsort(self.users, kind="stable")
        present, starts = np.unique(self.users[order], return_index=True)
        bounds = np.append(starts, len(order))
        return order, present, bounds

    @property
    def present_users(self) -> np.ndarray:
        """Dense indices of users with at least one triple, ascending."""
        return self._grouping[1]

    @property
    def present_items(self) -> np.ndarray:
        return np.unique(self.items)

    @property
    def n_users(self) -> int:
        return len(self.present_users)

    @property
    def n_items(self) -> int:
        return len(self.present_items)

    def profiles(self) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
        """Yield ``(user, items, ratings)`` per present user, ascending user index."""
        order, present, bounds = self._grouping
        for k, u in enumerate(present.tolist()):
            rows = order[bounds[k]:bounds[k + 1]]
            yield u, self.items[rows], self.ratings[rows]

    @cached_property
    def user_index(self) -> dict[int, list[tuple[int, int]]]:
        """User index -> list of ``(item index, rating)`` in source order."""
        return {
            u: list(zip(items.tolist(), ratings.tolist()))
            for u, items, ratings in self.profiles()
        }

    def profile(self, user: int) -> tuple[np.ndarray, np.ndarray]:
        order, present, bounds = self._grouping
        k = np.searchsorted(present, user)
        if k == len(present) or present[k] != user:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        rows = order[bounds[k]:bounds[k + 1]]
        return self.items[rows], self.ratings[rows]

    def subset(self, mask: np.ndarray) -> RatingDataset:
        """Triples selected by a boolean mask, same id space and scale."""
        return RatingDataset(
            self.users[mask], self.items[mask], self.ratings[mask],
            self.user_ids, self.item_ids, self.scale,
        )

    def density(self) -> float:
        """Ratings / (present users x present items)."""
        if not len(self):
            return 0.0
        return len(self) / (self.n_users * self.n_items)


@dataclass(frozen=True, eq=False)
class SplitPair:
    train: RatingDataset
    test: RatingDataset
    upl: int
    seed: int

    @property
    def retained_users(self) -> int:
        return self.train.n_users


class _IdMap:
    def __init__(self, ids: Sequence[str] = ()):
        self.ids = list(ids)
        self.index = {x: k for k, x in enumerate(self.ids)}

    def __call__(self, key: str) -> int:
        k = self.index.get(key)
        if k is None:
            k = self.index[key] = len(self.ids)
            self.ids.append(key)
        return k


def _iter_lines(stream: IO[bytes] | IO[str] | Iterable) -> Iterator[str]:
    for raw in stream:
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        yield raw.rstrip("\r\n")


def parse_ratings(
    stream: IO[bytes] | IO[str] | Iterable,
    format: str | RatingFormat = RatingFormat.TAB_SEPARATED,
    scale: tuple[int, int] = DEFAULT_SCALE,
    *,
    base: RatingDataset | None = None,
    source: str | None = None,
) -> RatingDataset:
    """Parse ``user<sep>item<sep>rating<sep>timestamp`` lines.

    Timestamps are discarded. Blank lines are skipped. When ``base`` is given,
    its id maps are extended instead of starting fresh, so two files (for
    instance the train and test halves of a split) land in one index space.

    Raises:
        ParseError: wrong field count or non-integer rating, with line number.
        ValidationError: rating outside ``scale`` or a repeated (user, item).
    """
    fmt = RatingFormat.from_name(format)
    sep = fmt.separator
    user_map = _IdMap(base.user_ids if base is not None else ())
    item_map = _IdMap(base.item_ids if base is not None else ())
    lo, hi = scale
    users: list[int] = []
    items: list[int] = []
    ratings: list[int] = []
    seen: dict[tuple[int, int], int] = {}
    for lineno, line in enumerate(_iter_lines(stream), start=1):
        if not line.strip():
            continue
        fields = line.split(sep)
        if len(fields) != 4:
            raise ParseError(f"expected 4 fields separated by {sep!r}, got {len(fields)}", lineno, source)
        user, item, rating_text = fields[0].strip(), fields[1].strip(), fields[2].strip()
        if not user or not item:
            raise ParseError("empty user or item id", lineno, source)
        try:
            rating = int(rating_text)
        except ValueError:
            try:
                as_float = float(rating_text)
            except ValueError:
                raise ParseError(f"non-numeric rating {rating_text!r}", lineno, source) from None
            if not as_float.is_integer():
                raise ParseError(f"non-integer rating {rating_text!r}", lineno, source)
            rating = int(as_float)
        if not lo <= rating <= hi:
            raise ValidationError(
                f"{source + ':' if source else ''}line {lineno}: rating {rating} outside scale {lo}..{hi}"
            )
        u, i = user_map(user), item_map(item)
        if (u, i) in seen:
            raise ValidationError(
                f"{source + ':' if source else ''}line {lineno}: duplicate rating for user {user!r}, "
                f"item {item!r} (first seen on line {seen[(u, i)]})"
            )
        seen[(u, i)] = lineno
        users.append(u)
        items.append(i)
        ratings.append(rating)
    return RatingDataset(
        np.asarray(users, np.int64), np.asarray(items, np.int64), np.asarray(ratings, np.int64),
        tuple(user_map.ids), tuple(item_map.ids), tuple(scale),
    )


def load_ratings(path: str | os.PathLike, format: str | RatingFormat = "tab",
                 scale: tuple[int, int] = DEFAULT_SCALE, *,
                 base: RatingDataset | None = None) -> RatingDataset:
    with open(path, "rb") as fh:
        return parse_ratings(fh, format, scale, base=base, source=os.fspath(path))


def write_ratings(dataset: RatingDataset, stream: IO[str],
                  format: str | RatingFormat = RatingFormat.TAB_SEPARATED) -> None:
    """Write triples in source order; the timestamp column is written as 0."""
    sep = RatingFormat.from_name(format).separator
    for t in dataset:
        stream.write(f"{t.user}{sep}{t.item}{sep}{t.rating}{sep}0\n")


def format_ratings(dataset: RatingDataset, format: str | RatingFormat = "tab") -> str:
    buf = io.StringIO()
    write_ratings(dataset, buf, format)
    return buf.getvalue()


def split_by_upl(dataset: RatingDataset, upl: int, seed: int) -> SplitPair:
    """Fixed user-profile-length train/test split.

    Every user with strictly more than ``upl`` ratings contributes a uniformly
    random subset of exactly ``upl`` ratings to train and the rest to test.
    Users with ``upl`` or fewer ratings are dropped from both sides. Selection
    uses numpy's PCG64 generator seeded with ``seed`` and visits users in
    ascending dense index, so the split is a pure function of its arguments.
    Both halves keep source order and the parent's id space.
    """
    if upl < 1:
        raise ValueError(f"upl must be >= 1, got {upl}")
    rng = np.random.Generator(np.random.PCG64(seed))
    order, present, bounds = dataset._grouping
    in_train = np.zeros(len(dataset), bool)
    in_test = np.zeros(len(dataset), bool)
    for k in range(len(present)):
        rows = order[bounds[k]:bounds[k + 1]]
        if len(rows) <= upl:
            continue
        chosen = rng.choice(len(rows), size=upl, replace=False)
        picked = np.zeros(len(rows), bool)
        picked[chosen] = True
        in_train[rows[picked]] = True
        in_test[rows[~picked]] = True
    if not in_train.any():
        raise EmptySplitError(f"no user has more than upl={upl} ratings")
    return SplitPair(dataset.subset(in_train), dataset.subset(in_test), upl, seed)


def user_average(train: RatingDataset) -> dict[int, float]:
    """Mean train rating per present user (dense user index -> mean)."""
    if not len(train):
        raise ValueError("user_average needs a nonempty train set")
    sums = np.bincount(train.users, weights=train.ratings.astype(np.float64),
                       minlength=len(train.user_ids))
    counts = np.bincount(train.users, minlength=len(train.user_ids))
    averages = {}
    for u in train.present_users.tolist():
        if counts[u] == 0:  # pragma: no cover - guarded by present_users
            raise RuntimeError(f"user {train.user_ids[u]!r} has no train ratings")
        averages[u] = float(sums[u] / counts[u])
    return averages


SPLIT_TRAIN = "train.tsv"
SPLIT_TEST = "test.tsv"
SPLIT_HEADER = "split.header"


def write_split(split: SplitPair, directory: str | os.PathLike,
                extra: dict[str, object] | None = None) -> None:
    """Write ``train.tsv``, ``test.tsv`` (ML-100K layout) and a key=value header."""
    os.makedirs(directory, exist_ok=True)
    for name, part in ((SPLIT_TRAIN, split.train), (SPLIT_TEST, split.test)):
        with open(os.path.join(directory, name), "w", encoding="utf-8", newline="\n") as fh:
            write_ratings(part, fh, RatingFormat.TAB_SEPARATED)
    header = {
        "upl": split.upl,
        "seed": split.seed,
        "retained_users": split.retained_users,
        "train_ratings": len(split.train),
        "test_ratings": len(split.test),
        "scale": f"{split.train.scale[0]},{split.train.scale[1]}",
    }
    header.update(extra or {})
    with open(os.path.join(directory, SPLIT_HEADER), "w", encoding="utf-8", newline="\n") as fh:
        for key, value in header.items():
            fh.write(f"{key} = {value}\n")


def read_header(path: str | os.PathLike) -> dict[str, str]:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ParseError("expected 'key = value'", lineno, os.fspath(path))
            values[key.strip()] = value.strip()
    return values


def load_split(directory: str | os.PathLike) -> SplitPair:
    """Read a split written by :func:`write_split` into one shared id space."""
    header = read_header(os.path.join(directory, SPLIT_HEADER))
    lo, hi = (int(x) for x in header.get("scale", "1,5").split(","))
    train = load_ratings(os.path.join(directory, SPLIT_TRAIN), "tab", (lo, hi))
    test_only = load_ratings(os.path.join(directory, SPLIT_TEST), "tab", (lo, hi), base=train)
    # Re-home train onto the extended id maps so both halves agree.
    train = RatingDataset(train.users, train.items, train.ratings,
                          test_only.user_ids, test_only.item_ids, (lo, hi))
    return SplitPair(train, test_only, int(header["upl"]), int(header["seed"]))
