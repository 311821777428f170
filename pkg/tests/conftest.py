import io
import os
from pathlib import Path

import numpy as np
import pytest

from rexnet.dataset import RatingDataset, load_ratings, parse_ratings

ROOT = Path(__file__).resolve().parents[1]
ML100K = ROOT / "data" / "ml-100k" / "u.data"

# criterion label -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0])):
        passed, detail = ACCEPTANCE[label]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {label}: {detail}")


@pytest.fixture(scope="session")
def ml100k_path() -> Path:
    if not ML100K.exists():
        pytest.skip(f"ML-100K ratings not found at {ML100K}")
    return ML100K


@pytest.fixture(scope="session")
def ml100k(ml100k_path) -> RatingDataset:
    return load_ratings(ml100k_path, "tab")


def dataset_from_rows(rows, scale=(1, 5)) -> RatingDataset:
    """Build a dataset from ``(user, item, rating)`` tuples via the TSV parser."""
    text = "".join(f"{u}\t{i}\t{r}\t0\n" for u, i, r in rows)
    return parse_ratings(io.StringIO(text), "tab", scale)


def two_block_rows(n_users=200, n_items=100, per_user=20, seed=0):
    """Users 0..n/2 rate only items of block A, the rest only block B."""
    rng = np.random.default_rng(seed)
    half_items = n_items // 2
    rows = []
    for u in range(n_users):
        block = 0 if u < n_users // 2 else 1
        pool = np.arange(block * half_items, (block + 1) * half_items)
        for item in rng.choice(pool, per_user, replace=False):
            rows.append((f"u{u}", f"i{item}", int(rng.integers(1, 6))))
    return rows


def block_of(token: str, n_items=100) -> int:
    return int(token[1:]) >= n_items // 2


def cosine_matrix(vectors: np.ndarray) -> np.ndarray:
    norm = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    return norm @ norm.T


def block_separation(table, n_items=100) -> float:
    """Mean intra-block minus mean inter-block cosine similarity."""
    blocks = np.asarray([block_of(t, n_items) for t in table.tokens])
    sims = cosine_matrix(table.vectors.astype(np.float64))
    same = blocks[:, None] == blocks[None, :]
    off_diag = ~np.eye(len(blocks), dtype=bool)
    return float(sims[same & off_diag].mean() - sims[~same].mean())


@pytest.fixture
def chdir_tmp(tmp_path):
    old = os.getcwd()
    os.chdir(tmp_path)
    yield tmp_path
    os.chdir(old)
