"""GloVe: weighted least squares on log co-occurrence counts, AdaGrad steps."""

from __future__ import annotations

import logging
import math

import numba
import numpy as np
from numba import njit, prange

from ..errors import TrainingError
from .config import EmbeddingConfig
from .cooccurrence import CooccurrenceMatrix
from .table import EmbeddingTable, GloveBiases

log = logging.getLogger(__name__)


def glove_weight(x, x_max: float = 100.0, alpha: float = 0.75):
    """``(x / x_max) ** alpha`` below ``x_max``, 1 at or above it."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("co-occurrence counts must be non-negative")
    w = np.where(x < x_max, (x / x_max) ** alpha, 1.0)
    return float(w) if w.ndim == 0 else w


def glove_entry_loss(w_i, w_tilde_j, b_i, b_tilde_j, x_ij, x_max=100.0, alpha=0.75) -> float:
    """Contribution of one nonzero entry to the GloVe cost."""
    diff = float(np.dot(w_i, w_tilde_j)) + b_i + b_tilde_j - math.log(x_ij)
    return glove_weight(x_ij, x_max, alpha) * diff * diff


def glove_entry_gradients(w_i, w_tilde_j, b_i, b_tilde_j, x_ij, x_max=100.0, alpha=0.75):
    """Gradients of :func:`glove_entry_loss` w.r.t. ``(w_i, w_tilde_j, b_i, b_tilde_j)``."""
    w_i = np.asarray(w_i, dtype=np.float64)
    w_tilde_j = np.asarray(w_tilde_j, dtype=np.float64)
    diff = float(np.dot(w_i, w_tilde_j)) + b_i + b_tilde_j - math.log(x_ij)
    g = 2.0 * glove_weight(x_ij, x_max, alpha) * diff
    return g * w_tilde_j, g * w_i, g, g


def glove_cost(cooc: CooccurrenceMatrix, w, w_tilde, b, b_tilde, x_max=100.0, alpha=0.75) -> float:
    """Full cost over all stored entries, vectorised."""
    pred = np.einsum("ij,ij->i", w[cooc.rows].astype(np.float64), w_tilde[cooc.cols].astype(np.float64))
    diff = pred + b[cooc.rows] + b_tilde[cooc.cols] - np.log(cooc.counts)
    return float(np.sum(glove_weight(cooc.counts, x_max, alpha) * diff * diff))


@njit(cache=True)
def _glove_epoch(rows, cols, log_x, weight, order, w, w_tilde, b, b_tilde,
                 sq_w, sq_w_tilde, sq_b, sq_b_tilde, lr):
    dim = w.shape[1]
    cost = 0.0
    for n in order:
        i = rows[n]
        j = cols[n]
        diff = 0.0
        for d in range(dim):
            diff += float(w[i, d]) * float(w_tilde[j, d])
        diff += b[i] + b_tilde[j] - log_x[n]
        g = 2.0 * weight[n] * diff
        cost += weight[n] * diff * diff
        for d in range(dim):
            gw = g * w_tilde[j, d]
            gwt = g * w[i, d]
            w[i, d] -= lr * gw / np.sqrt(sq_w[i, d])
            w_tilde[j, d] -= lr * gwt / np.sqrt(sq_w_tilde[j, d])
            sq_w[i, d] += gw * gw
            sq_w_tilde[j, d] += gwt * gwt
        b[i] -= lr * g / np.sqrt(sq_b[i])
        b_tilde[j] -= lr * g / np.sqrt(sq_b_tilde[j])
        sq_b[i] += g * g
        sq_b_tilde[j] += g * g
    return cost


@njit(cache=True, parallel=True)
def _glove_epoch_hogwild(rows, cols, log_x, weight, order, bounds, w, w_tilde, b, b_tilde,
                         sq_w, sq_w_tilde, sq_b, sq_b_tilde, lr):
    # Shards update the shared tables without locks; results depend on timing.
    n_shards = len(bounds) - 1
    costs = np.zeros(n_shards)
    for k in prange(n_shards):
        costs[k] = _glove_epoch(rows, cols, log_x, weight, order[bounds[k]:bounds[k + 1]],
                                w, w_tilde, b, b_tilde, sq_w, sq_w_tilde, sq_b, sq_b_tilde, lr)
    return costs.sum()


def glove_step(rows, cols, log_x, weight, order, w, w_tilde, b, b_tilde,
               sq_w, sq_w_tilde, sq_b, sq_b_tilde, lr) -> float:
    """One pass over ``order``; updates everything in place, returns the cost.

    Each entry uses the cost evaluated before its own update. Accumulators
    hold 1 + the running sum of squared gradients (AdaGrad with unit start).
    """
    return _glove_epoch(rows, cols, log_x, weight, order, w, w_tilde, b, b_tilde,
                        sq_w, sq_w_tilde, sq_b, sq_b_tilde, lr)


def train_glove(cooc: CooccurrenceMatrix, config: EmbeddingConfig) -> EmbeddingTable:
    """Fit GloVe vectors to ``cooc``.

    Vectors start uniform in ``[-0.5/dim, 0.5/dim)``, biases at zero. Every
    epoch visits the nonzero entries in a fresh seeded order (or a fixed
    order when ``config.reshuffle`` is off) and records the summed cost.
    With ``config.threads > 1`` the order is split into lock-free shards,
    which trades bit-exact reproducibility for speed.
    """
    if config.method != "glove":
        raise ValueError("train_glove needs config.method == 'glove'")
    if cooc.nnz == 0:
        raise ValueError("co-occurrence matrix is empty")
    rng = np.random.default_rng(config.seed)
    v, dim = cooc.vocab_size, config.dim
    w = ((rng.random((v, dim)) - 0.5) / dim).astype(np.float32)
    w_tilde = ((rng.random((v, dim)) - 0.5) / dim).astype(np.float32)
    b = np.zeros(v, np.float32)
    b_tilde = np.zeros(v, np.float32)
    sq_w = np.ones((v, dim))
    sq_w_tilde = np.ones((v, dim))
    sq_b = np.ones(v)
    sq_b_tilde = np.ones(v)
    log_x = np.log(cooc.counts)
    weight = np.asarray(glove_weight(cooc.counts, config.x_max, config.alpha), dtype=np.float64)
    rows = cooc.rows.astype(np.int64)
    cols = cooc.cols.astype(np.int64)
    order = np.arange(cooc.nnz, dtype=np.int64)
    trace = []
    for epoch in range(1, config.epochs + 1):
        if config.reshuffle or epoch == 1:
            order = rng.permutation(cooc.nnz).astype(np.int64)
        if config.threads > 1:
            bounds = np.linspace(0, cooc.nnz, config.threads + 1).round().astype(np.int64)
            numba.set_num_threads(min(config.threads, numba.config.NUMBA_NUM_THREADS))
            cost = _glove_epoch_hogwild(rows, cols, log_x, weight, order, bounds, w, w_tilde, b,
                                        b_tilde, sq_w, sq_w_tilde, sq_b, sq_b_tilde, config.lr)
        else:
            cost = glove_step(rows, cols, log_x, weight, order, w, w_tilde, b, b_tilde,
                              sq_w, sq_w_tilde, sq_b, sq_b_tilde, config.lr)
        if not math.isfinite(cost) or not np.isfinite(w).all() or not np.isfinite(w_tilde).all():
            raise TrainingError("GloVe cost diverged", epoch)
        trace.append(cost)
        log.info("glove epoch %d/%d cost %.6f", epoch, config.epochs, cost)
    vectors = w + w_tilde if config.glove_export == "sum" else w.copy()
    return EmbeddingTable(
        cooc.tokens, vectors.astype(np.float32), w, w_tilde,
        GloveBiases(b, b_tilde), tuple(trace), "glove",
    )
