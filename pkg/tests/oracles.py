"""Independent reference computations shared by the unit and acceptance tests."""

import itertools
import math

import numpy as np

from rexnet.neural import batch_loss_and_gradients


def rel_error(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def central_difference(f, x, step):
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        up = f(x)
        x[idx] = orig - step
        down = f(x)
        x[idx] = orig
        grad[idx] = (up - down) / (2 * step)
    return grad


def network_rel_error(params, u, i, targets, step=1e-4) -> float:
    """Analytic batch-loss gradients against central differences over every parameter."""
    _, grads = batch_loss_and_gradients(params, u, i, targets)
    tensors = params.tensors()
    analytic, numeric = [], []
    for name, value in tensors.items():
        g = grads.tensors()[name]
        for idx in np.ndindex(value.shape):
            orig = value[idx]
            value[idx] = orig + step
            up, _ = batch_loss_and_gradients(params, u, i, targets)
            value[idx] = orig - step
            down, _ = batch_loss_and_gradients(params, u, i, targets)
            value[idx] = orig
            analytic.append(g[idx])
            numeric.append((up - down) / (2 * step))
    return rel_error(analytic, numeric)


def oracle_dcg(ratings, n, paper=False) -> float:
    total = 0.0
    for pos, r in enumerate(ratings[:n], start=1):
        disc = math.log2(pos) + 1 if paper else math.log2(pos + 1)
        total += (2 ** r - 1) / disc
    return total


def oracle_ideal(ratings, n, paper=False) -> float:
    """Best DCG over every ordering, no sorting involved."""
    return max(oracle_dcg(list(p), n, paper) for p in itertools.permutations(ratings))


def oracle_user_vector(profile, vectors) -> list[float]:
    """Sum of (rating - mean rating) * item vector, in plain Python floats."""
    mean = sum(r for _, r in profile) / len(profile)
    acc = [0.0] * len(next(iter(vectors.values())))
    for item, r in profile:
        for d, x in enumerate(vectors[item]):
            acc[d] += (r - mean) * float(x)
    return acc
