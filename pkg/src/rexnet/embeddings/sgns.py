"""Skip-gram with negative sampling over rating sentences."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numba
import numpy as np
from numba import njit, prange

from ..corpus import Corpus, epoch_seed, shuffle_corpus
from ..errors import TrainingError, ValidationError
from ._rng import new_state, next_u64, next_uniform
from .config import EmbeddingConfig
from .cooccurrence import CooccurrenceMatrix, build_cooccurrence
from .table import EmbeddingTable

log = logging.getLogger(__name__)


def log_sigmoid(x):
    """Numerically stable ``log(1 / (1 + exp(-x)))``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x >= 0, -np.log1p(np.exp(-np.abs(x))), x - np.log1p(np.exp(-np.abs(x))))
    return float(out) if out.ndim == 0 else out


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.exp(-np.logaddexp(0.0, -x))
    return float(out) if out.ndim == 0 else out


def sgns_pair_objective(center, context_out, negative_outs) -> float:
    """Negative-sampling objective of one (center, context) pair.

    ``log s(c'.v) + sum_k log s(-n'_k.v)`` where ``v`` is the center's input
    vector, ``c'`` the context's output vector and ``n'_k`` the output vectors
    of the sampled negatives. Larger is better (at most 0).
    """
    center = np.asarray(center, dtype=np.float64)
    total = log_sigmoid(np.dot(context_out, center))
    for neg in negative_outs:
        total += log_sigmoid(-np.dot(np.asarray(neg, dtype=np.float64), center))
    return float(total)


def sgns_pair_gradients(center, context_out, negative_outs):
    """Gradient of :func:`sgns_pair_objective` w.r.t. every argument.

    Returns ``(d_center, d_context_out, [d_negative_out, ...])``.
    """
    center = np.asarray(center, dtype=np.float64)
    context_out = np.asarray(context_out, dtype=np.float64)
    coef = 1.0 - sigmoid(np.dot(context_out, center))
    d_center = coef * context_out
    d_context = coef * center
    d_negs = []
    for neg in negative_outs:
        neg = np.asarray(neg, dtype=np.float64)
        coef = -sigmoid(np.dot(neg, center))
        d_center = d_center + coef * neg
        d_negs.append(coef * center)
    return d_center, d_context, d_negs


@dataclass(frozen=True)
class NoiseDistribution:
    """Sampling distribution proportional to ``count ** power``."""

    probabilities: np.ndarray
    cdf: np.ndarray

    @classmethod
    def from_counts(cls, counts, power: float = 0.75) -> NoiseDistribution:
        counts = np.asarray(counts, dtype=np.float64)
        if counts.size == 0:
            raise ValidationError("cannot sample negatives from an empty vocabulary")
        if np.any(counts <= 0):
            raise ValidationError("vocabulary counts must be positive")
        weights = counts ** power
        probabilities = weights / weights.sum()
        cdf = np.cumsum(probabilities)
        cdf[-1] = 1.0
        return cls(probabilities, cdf)

    def __len__(self) -> int:
        return len(self.probabilities)


@njit(cache=True)
def _draw(cdf, state):
    return np.searchsorted(cdf, next_uniform(state), side="right")


def draw_negative(noise: NoiseDistribution, state: np.ndarray) -> int:
    """Draw one vocabulary row from ``noise``, advancing the SplitMix64 ``state``."""
    if len(noise) == 0:
        raise ValidationError("cannot sample negatives from an empty vocabulary")
    return int(_draw(noise.cdf, state))


def corpus_objective(syn0: np.ndarray, syn1: np.ndarray, cooc: CooccurrenceMatrix,
                     noise: NoiseDistribution, negatives: int, block: int = 512) -> float:
    """Mean per-pair objective over a whole corpus at fixed parameters.

    Positive pairs come from ``cooc`` (built with the training window) and the
    negative term is the exact expectation under ``noise`` rather than a
    sample, so the value is deterministic.
    """
    if cooc.nnz == 0:
        return 0.0
    w_in = syn0.astype(np.float64)
    w_out = syn1.astype(np.float64)
    positive = float(np.sum(cooc.counts * log_sigmoid(
        np.einsum("ij,ij->i", w_in[cooc.rows], w_out[cooc.cols]))))
    as_center = np.bincount(cooc.rows, weights=cooc.counts, minlength=len(w_in))
    negative = 0.0
    for start in range(0, len(w_in), block):
        scores = w_in[start:start + block] @ w_out.T
        expected = log_sigmoid(-scores) @ noise.probabilities
        negative += float(as_center[start:start + block] @ expected)
    return (positive + negatives * negative) / float(cooc.counts.sum())


def count_pairs(offsets: np.ndarray, window: int) -> int:
    """Number of (center, context) pairs a window pass produces."""
    total = 0
    for length in np.diff(offsets).tolist():
        for t in range(length):
            total += min(length - 1, t + window) - max(0, t - window)
    return total


@njit(cache=True)
def _log_sigmoid(x):
    if x >= 0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


@njit(cache=True)
def _sgns_range(tokens, offsets, s_begin, s_end, syn0, syn1, cdf, window, negatives,
                lr0, min_lr_frac, processed, total_pairs, scale, state, neu1e):
    dim = syn0.shape[1]
    objective = 0.0
    pairs = 0
    for s in range(s_begin, s_end):
        start = offsets[s]
        end = offsets[s + 1]
        for t in range(start, end):
            center = tokens[t]
            lo = max(start, t - window)
            hi = min(end, t + window + 1)
            for c in range(lo, hi):
                if c == t:
                    continue
                lr = lr0 * max(min_lr_frac, 1.0 - (processed + pairs * scale) / total_pairs)
                for d in range(dim):
                    neu1e[d] = 0.0
                for k in range(negatives + 1):
                    if k == 0:
                        target = tokens[c]
                        label = 1.0
                    else:
                        target = np.searchsorted(cdf, next_uniform(state), side="right")
                        label = 0.0
                    f = 0.0
                    for d in range(dim):
                        f += float(syn0[center, d]) * float(syn1[target, d])
                    if k == 0:
                        objective += _log_sigmoid(f)
                    else:
                        objective += _log_sigmoid(-f)
                    g = (label - 1.0 / (1.0 + math.exp(-f))) * lr
                    for d in range(dim):
                        neu1e[d] += g * syn1[target, d]
                        syn1[target, d] += g * syn0[center, d]
                for d in range(dim):
                    syn0[center, d] += neu1e[d]
                pairs += 1
    return objective, pairs


@njit(cache=True)
def _sgns_epoch(tokens, offsets, syn0, syn1, cdf, window, negatives, lr0, min_lr_frac,
                processed, total_pairs, state):
    neu1e = np.zeros(syn0.shape[1], np.float64)
    return _sgns_range(tokens, offsets, 0, len(offsets) - 1, syn0, syn1, cdf, window,
                       negatives, lr0, min_lr_frac, processed, total_pairs, 1.0, state, neu1e)


@njit(cache=True, parallel=True)
def _sgns_epoch_hogwild(tokens, offsets, bounds, syn0, syn1, cdf, window, negatives, lr0,
                        min_lr_frac, processed, total_pairs, states):
    # Shards update the shared tables without locks; results depend on timing.
    n_shards = len(bounds) - 1
    objectives = np.zeros(n_shards)
    counts = np.zeros(n_shards, np.int64)
    for k in prange(n_shards):
        neu1e = np.zeros(syn0.shape[1], np.float64)
        obj, pairs = _sgns_range(tokens, offsets, bounds[k], bounds[k + 1], syn0, syn1, cdf,
                                 window, negatives, lr0, min_lr_frac, processed, total_pairs,
                                 float(n_shards), states[k], neu1e)
        objectives[k] = obj
        counts[k] = pairs
    return objectives.sum(), counts.sum()


def train_sgns(corpus: Corpus, config: EmbeddingConfig) -> EmbeddingTable:
    """Train skip-gram vectors with negative sampling.

    The corpus is used as given for the first epoch and, with
    ``config.reshuffle``, re-permuted per sentence before every later epoch.
    For each center position every token at distance ``1..window`` inside the
    same sentence is a positive context; ``config.negatives`` noise items
    are drawn per pair. The step size decays linearly from ``config.lr`` to
    ``config.lr * config.min_lr_fraction`` over all pairs of all epochs.

    Returns the input vectors as item representations. ``trace`` holds, per
    epoch, :func:`corpus_objective` on that epoch's sentences evaluated after
    the epoch's updates; the running mean seen during the updates is kept in
    ``meta["online_trace"]``. The running mean overstates progress while the
    step size is large, since pairs late in a sentence benefit from updates
    made on the same sentence moments earlier.
    """
    if config.method != "sgns":
        raise ValueError("train_sgns needs config.method == 'sgns'")
    if corpus.vocab_size == 0:
        raise ValidationError("corpus has an empty vocabulary")
    noise = NoiseDistribution.from_counts(corpus.counts, config.noise_power)
    rng = np.random.default_rng(config.seed)
    v, dim = corpus.vocab_size, config.dim
    syn0 = ((rng.random((v, dim)) - 0.5) / dim).astype(np.float32)
    syn1 = np.zeros((v, dim), np.float32)
    state = new_state(config.seed)

    _, offsets = corpus.encoded()
    pairs_per_epoch = count_pairs(offsets, config.window)
    total_pairs = max(1, pairs_per_epoch * config.epochs)
    threads = config.threads
    trace = []
    online = []
    processed = 0
    current = corpus
    for epoch in range(1, config.epochs + 1):
        if config.reshuffle and epoch > 1:
            current = shuffle_corpus(corpus, epoch_seed(config.seed, epoch))
        tokens, offsets = current.encoded()
        if threads > 1:
            bounds = np.linspace(0, len(offsets) - 1, threads + 1).round().astype(np.int64)
            states = np.array([[next_u64(state)] for _ in range(threads)], dtype=np.uint64)
            numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
            objective, pairs = _sgns_epoch_hogwild(
                tokens, offsets, bounds, syn0, syn1, noise.cdf, config.window, config.negatives,
                config.lr, config.min_lr_fraction, float(processed), float(total_pairs), states)
        else:
            objective, pairs = _sgns_epoch(
                tokens, offsets, syn0, syn1, noise.cdf, config.window, config.negatives,
                config.lr, config.min_lr_fraction, float(processed), float(total_pairs), state)
        processed += pairs
        mean = objective / pairs if pairs else 0.0
        if not math.isfinite(mean) or not np.isfinite(syn0).all() or not np.isfinite(syn1).all():
            raise TrainingError("SGNS parameters diverged", epoch)
        online.append(mean)
        frozen = corpus_objective(syn0, syn1, build_cooccurrence(current, config.window),
                                  noise, config.negatives)
        trace.append(frozen)
        log.info("sgns epoch %d/%d objective %.6f (running %.6f)", epoch, config.epochs, frozen, mean)
    return EmbeddingTable(corpus.vocab_tokens, syn0.copy(), syn0, syn1, None, tuple(trace), "sgns",
                          {"online_trace": tuple(online)})
