import io
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rexnet.dataset import (
    RatingFormat,
    format_ratings,
    load_split,
    parse_ratings,
    split_by_upl,
    user_average,
    write_split,
)
from rexnet.errors import EmptySplitError, ParseError, ValidationError

from conftest import dataset_from_rows


def test_parse_tab_and_double_colon_agree():
    tab = parse_ratings(io.StringIO("1\t10\t5\t881250949\n2\t10\t3\t0\n"), "tab")
    colon = parse_ratings(io.StringIO("1::10::5::978300760\n2::10::3::0\n"), "double_colon")
    assert tab == colon
    assert [(t.user, t.item, t.rating) for t in tab] == [("1", "10", 5), ("2", "10", 3)]


def test_parse_accepts_bytes_blank_lines_and_integer_floats():
    data = parse_ratings(io.BytesIO(b"1\t2\t4.0\t0\n\n3\t2\t1\t0\n"), "tab")
    assert len(data) == 2
    assert data.ratings.tolist() == [4, 1]


@pytest.mark.parametrize("text,line", [
    ("1\t2\t3\t0\n1\t2\n", 2),
    ("1\t2\t3\t0\n\n1\t3\tfive\t0\n", 3),
    ("1\t2\t3.5\t0\n", 1),
    ("\t2\t3\t0\n", 1),
])
def test_parse_error_names_line(text, line):
    with pytest.raises(ParseError) as info:
        parse_ratings(io.StringIO(text), "tab", source="u.data")
    assert info.value.line == line
    assert f"line {line}" in str(info.value)
    assert "u.data" in str(info.value)


def test_rating_out_of_scale_is_rejected():
    with pytest.raises(ValidationError, match="line 2"):
        parse_ratings(io.StringIO("1\t1\t5\t0\n1\t2\t6\t0\n"), "tab")


def test_duplicate_pair_is_rejected():
    with pytest.raises(ValidationError, match="duplicate"):
        parse_ratings(io.StringIO("1\t1\t5\t0\n1\t1\t4\t0\n"), "tab")


def test_empty_stream_gives_empty_dataset():
    data = parse_ratings(io.StringIO(""), "tab")
    assert len(data) == 0
    assert data.density() == 0.0


def test_format_aliases():
    assert RatingFormat.from_name("tab").separator == "\t"
    assert RatingFormat.from_name("double_colon").separator == "::"
    with pytest.raises(ValueError):
        RatingFormat.from_name("csv")


ratings_rows = st.lists(
    st.tuples(st.integers(0, 15), st.integers(0, 30), st.integers(1, 5)),
    min_size=1, max_size=80,
    unique_by=lambda t: (t[0], t[1]),
)


@given(ratings_rows, st.sampled_from(["tab", "double_colon"]))
def test_write_then_parse_round_trips(rows, fmt):
    data = dataset_from_rows(rows)
    again = parse_ratings(io.StringIO(format_ratings(data, fmt)), fmt)
    assert again == data


@settings(max_examples=60)
@given(ratings_rows, st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_split_invariants(rows, upl, seed):
    data = dataset_from_rows(rows)
    lengths = Counter(data.users.tolist())
    if max(lengths.values()) <= upl:
        with pytest.raises(EmptySplitError):
            split_by_upl(data, upl, seed)
        return
    split = split_by_upl(data, upl, seed)
    train, test = split.train.as_set(), split.test.as_set()
    assert not train & test
    kept = {data.user_ids[u] for u, n in lengths.items() if n > upl}
    assert train | test == {t for t in data.as_set() if t[0] in kept}
    train_lengths = Counter(t[0] for t in train)
    assert set(train_lengths) == kept
    assert set(train_lengths.values()) == {upl}
    assert {t[0] for t in test} <= kept
    again = split_by_upl(data, upl, seed)
    assert again.train.as_set() == train and again.test.as_set() == test


def test_split_depends_on_seed(ml100k):
    a = split_by_upl(ml100k, 10, 1).train.as_set()
    b = split_by_upl(ml100k, 10, 2).train.as_set()
    assert a != b


def test_user_with_exactly_upl_ratings_is_dropped():
    rows = [("a", str(i), 3) for i in range(3)] + [("b", str(i), 3) for i in range(4)]
    split = split_by_upl(dataset_from_rows(rows), 3, 0)
    assert {t.user for t in split.train} == {"b"}
    assert len(split.test) == 1


@pytest.mark.parametrize("ratings,expected", [
    ([4, 4, 4], 4.0),
    ([1, 5], 3.0),
    ([2, 3, 5, 5], 3.75),
])
def test_user_average(ratings, expected):
    data = dataset_from_rows([("u", str(k), r) for k, r in enumerate(ratings)])
    assert user_average(data) == {0: expected}


def test_ml100k_shape(ml100k):
    assert len(ml100k) == 100_000
    assert ml100k.n_users == 943
    assert ml100k.n_items == 1682
    assert ml100k.density() == pytest.approx(0.0630, abs=5e-5)


def test_ml100k_retained_users_match_raw_count(ml100k_path, ml100k):
    # independent count straight from the raw file
    per_user = Counter(line.split("\t")[0] for line in ml100k_path.read_text().splitlines() if line)
    for upl in (10, 50):
        expected = sum(1 for n in per_user.values() if n > upl)
        assert split_by_upl(ml100k, upl, 0).retained_users == expected


def test_split_files_round_trip(tmp_path, ml100k):
    split = split_by_upl(ml100k, 10, 3)
    write_split(split, tmp_path, {"format": "tab"})
    again = load_split(tmp_path)
    assert again.upl == 10 and again.seed == 3
    assert again.train == split.train
    assert again.test == split.test
    assert again.train.item_ids == again.test.item_ids
    header = (tmp_path / "split.header").read_text()
    assert f"retained_users = {split.retained_users}" in header
