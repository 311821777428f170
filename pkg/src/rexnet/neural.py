"""Dual-tower feed-forward preference regressor, written directly in numpy.

Two ReLU towers map the user vector and the item vector to small feature
vectors. Their concatenation feeds one shared ReLU layer and a linear output
neuron that predicts ``rating - user_mean``. Both towers are trained by the
same output error.

Row-vector convention throughout: a layer computes ``x @ W + b`` with ``W``
of shape ``(fan_in, fan_out)``.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import IO, Iterator, Sequence

import numpy as np

from .embeddings.table import format_float
from .errors import ParseError, TrainingError, ValidationError

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "rexnet-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int = 100
    tower_layers: tuple[int, ...] = (30, 20, 10, 5)
    shared_layer: int | None = 5
    dropout_tower: float = 0.4
    dropout_shared: float = 0.2
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        layers = tuple(int(x) for x in self.tower_layers)
        object.__setattr__(self, "tower_layers", layers)
        if not layers or min(layers) < 1:
            raise ValueError("tower_layers must be a non-empty list of positive sizes")
        if any(b > a for a, b in zip(layers, layers[1:])):
            raise ValueError(f"tower_layers must be non-increasing, got {list(layers)}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.shared_layer is not None and self.shared_layer < 1:
            raise ValueError("shared_layer must be >= 1 or None")
        for name in ("dropout_tower", "dropout_shared"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if not self.learning_rate > 0 or not 0 <= self.momentum < 1:
            raise ValueError("need learning_rate > 0 and 0 <= momentum < 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tower_layers"] = list(self.tower_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> NetworkConfig:
        d = dict(d)
        d["tower_layers"] = tuple(d["tower_layers"])
        return cls(**d)


Layer = tuple[np.ndarray, np.ndarray]


@dataclass
class TowerNetworkParams:
    config: NetworkConfig
    user_tower: list[Layer]
    item_tower: list[Layer]
    shared: Layer | None
    output: Layer  # weight (width, 1), bias (1,)

    def named(self) -> Iterator[tuple[str, np.ndarray]]:
        """All tensors in a fixed order, with stable names."""
        for tower_name, tower in (("user", self.user_tower), ("item", self.item_tower)):
            for k, (w, b) in enumerate(tower):
                yield f"{tower_name}.{k}.weight", w
                yield f"{tower_name}.{k}.bias", b
        if self.shared is not None:
            yield "shared.weight", self.shared[0]
            yield "shared.bias", self.shared[1]
        yield "output.weight", self.output[0]
        yield "output.bias", self.output[1]

    def tensors(self) -> dict[str, np.ndarray]:
        return dict(self.named())

    @classmethod
    def from_tensors(cls, config: NetworkConfig, tensors: dict[str, np.ndarray]) -> TowerNetworkParams:
        n = len(config.tower_layers)
        towers = [[(tensors[f"{t}.{k}.weight"], tensors[f"{t}.{k}.bias"]) for k in range(n)]
                  for t in ("user", "item")]
        shared = None
        if config.shared_layer is not None:
            shared = (tensors["shared.weight"], tensors["shared.bias"])
        params = cls(config, towers[0], towers[1], shared,
                     (tensors["output.weight"], tensors["output.bias"]))
        expected = _shapes(config)
        for name, arr in params.named():
            if arr.shape != expected[name]:
                raise ValidationError(f"tensor {name} has shape {arr.shape}, expected {expected[name]}")
        return params

    def map(self, fn) -> TowerNetworkParams:
        return TowerNetworkParams.from_tensors(self.config, {k: fn(v) for k, v in self.named()})

    def copy(self) -> TowerNetworkParams:
        return self.map(np.copy)

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for _, a in self.named())


def _shapes(config: NetworkConfig) -> dict[str, tuple[int, ...]]:
    shapes = {}
    widths = (config.input_dim,) + config.tower_layers
    for t in ("user", "item"):
        for k in range(len(config.tower_layers)):
            shapes[f"{t}.{k}.weight"] = (widths[k], widths[k + 1])
            shapes[f"{t}.{k}.bias"] = (widths[k + 1],)
    joint = 2 * config.tower_layers[-1]
    if config.shared_layer is not None:
        shapes["shared.weight"] = (joint, config.shared_layer)
        shapes["shared.bias"] = (config.shared_layer,)
        joint = config.shared_layer
    shapes["output.weight"] = (joint, 1)
    shapes["output.bias"] = (1,)
    return shapes


def init_network(config: NetworkConfig, seed: int | None = None) -> TowerNetworkParams:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    tensors = {}
    for name, shape in _shapes(config).items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = rng.uniform(-limit, limit, size=shape)
    return TowerNetworkParams.from_tensors(config, tensors)


def zero_network(config: NetworkConfig) -> TowerNetworkParams:
    return TowerNetworkParams.from_tensors(
        config, {name: np.zeros(shape) for name, shape in _shapes(config).items()})


@dataclass
class ForwardTrace:
    inputs: tuple[np.ndarray, np.ndarray]
    user_pre: list[np.ndarray] = field(default_factory=list)
    user_act: list[np.ndarray] = field(default_factory=list)
    item_pre: list[np.ndarray] = field(default_factory=list)
    item_act: list[np.ndarray] = field(default_factory=list)
    joint: np.ndarray | None = None
    shared_pre: np.ndarray | None = None
    shared_act: np.ndarray | None = None
    output: np.ndarray | None = None
    masks: dict[str, np.ndarray] = field(default_factory=dict)

    def activations(self) -> Iterator[np.ndarray]:
        yield from self.user_act
        yield from self.item_act
        if self.shared_act is not None:
            yield self.shared_act


def _dropout_mask(rng: np.random.Generator, shape, p: float) -> np.ndarray:
    return (rng.random(shape) >= p) / (1.0 - p)


def _tower(layers: list[Layer], x: np.ndarray, pre: list, act: list) -> np.ndarray:
    for w, b in layers:
        z = x @ w + b
        x = np.maximum(z, 0.0)
        pre.append(z)
        act.append(x)
    return x


def forward(params: TowerNetworkParams, user_vec, item_vec, mode: str = "infer",
            rng: np.random.Generator | None = None):
    """Run the network; returns ``(prediction, trace)``.

    Inputs may be single vectors (prediction is a float) or ``(batch, dim)``
    arrays (prediction is a 1-d array). In ``train`` mode inverted dropout
    masks are drawn from ``rng`` after the last layer of each tower and after
    the shared layer; ``infer`` mode applies neither masks nor scaling.
    """
    if mode not in ("train", "infer"):
        raise ValueError("mode must be 'train' or 'infer'")
    cfg = params.config
    u = np.asarray(user_vec, dtype=np.float64)
    i = np.asarray(item_vec, dtype=np.float64)
    single = u.ndim == 1
    u, i = np.atleast_2d(u), np.atleast_2d(i)
    if u.shape[1] != cfg.input_dim or i.shape[1] != cfg.input_dim:
        raise ValidationError(
            f"input dimension mismatch: got {u.shape[1]} and {i.shape[1]}, network expects {cfg.input_dim}")
    if u.shape[0] != i.shape[0]:
        raise ValidationError("user and item batches differ in length")
    training = mode == "train"
    if training and rng is None:
        raise ValueError("train mode needs an rng for dropout")
    trace = ForwardTrace((u, i))
    a_u = _tower(params.user_tower, u, trace.user_pre, trace.user_act)
    a_i = _tower(params.item_tower, i, trace.item_pre, trace.item_act)
    if training and cfg.dropout_tower > 0:
        trace.masks["user"] = _dropout_mask(rng, a_u.shape, cfg.dropout_tower)
        trace.masks["item"] = _dropout_mask(rng, a_i.shape, cfg.dropout_tower)
        a_u = a_u * trace.masks["user"]
        a_i = a_i * trace.masks["item"]
    h = np.concatenate([a_u, a_i], axis=1)
    trace.joint = h
    if params.shared is not None:
        w, b = params.shared
        trace.shared_pre = h @ w + b
        h = np.maximum(trace.shared_pre, 0.0)
        if training and cfg.dropout_shared > 0:
            trace.masks["shared"] = _dropout_mask(rng, h.shape, cfg.dropout_shared)
            h = h * trace.masks["shared"]
        trace.shared_act = h
    w, b = params.output
    out = (h @ w + b)[:, 0]
    trace.output = out
    return (float(out[0]) if single else out), trace


def backward(params: TowerNetworkParams, trace: ForwardTrace, d_out) -> TowerNetworkParams:
    """Gradients of ``sum(d_out * prediction)`` w.r.t. every parameter."""
    d_out = np.atleast_1d(np.asarray(d_out, dtype=np.float64))[:, None]
    grads: dict[str, np.ndarray] = {}
    h = trace.shared_act if params.shared is not None else trace.joint
    w_out = params.output[0]
    grads["output.weight"] = h.T @ d_out
    grads["output.bias"] = d_out.sum(axis=0)
    d_h = d_out @ w_out.T
    if params.shared is not None:
        if "shared" in trace.masks:
            d_h = d_h * trace.masks["shared"]
        d_pre = d_h * (trace.shared_pre > 0)
        grads["shared.weight"] = trace.joint.T @ d_pre
        grads["shared.bias"] = d_pre.sum(axis=0)
        d_h = d_pre @ params.shared[0].T
    width = params.config.tower_layers[-1]
    for name, d, layers, pre, act, x in (
        ("user", d_h[:, :width], params.user_tower, trace.user_pre, trace.user_act, trace.inputs[0]),
        ("item", d_h[:, width:], params.item_tower, trace.item_pre, trace.item_act, trace.inputs[1]),
    ):
        if name in trace.masks:
            d = d * trace.masks[name]
        for k in range(len(layers) - 1, -1, -1):
            d_pre = d * (pre[k] > 0)
            below = act[k - 1] if k > 0 else x
            grads[f"{name}.{k}.weight"] = below.T @ d_pre
            grads[f"{name}.{k}.bias"] = d_pre.sum(axis=0)
            if k > 0:
                d = d_pre @ layers[k][0].T
    return TowerNetworkParams.from_tensors(params.config, grads)


def loss(prediction, target):
    """Squared error; arrays give the per-example values."""
    diff = np.asarray(prediction, dtype=np.float64) - target
    out = diff * diff
    return float(out) if out.ndim == 0 else out


def loss_gradient(prediction, target):
    diff = 2.0 * (np.asarray(prediction, dtype=np.float64) - target)
    return float(diff) if diff.ndim == 0 else diff


def batch_loss_and_gradients(params: TowerNetworkParams, user_vecs, item_vecs, targets,
                             mode: str = "infer", rng=None) -> tuple[float, TowerNetworkParams]:
    """Mean squared error over a batch and its parameter gradients."""
    pred, trace = forward(params, np.atleast_2d(user_vecs), np.atleast_2d(item_vecs), mode, rng)
    targets = np.atleast_1d(np.asarray(targets, dtype=np.float64))
    n = len(targets)
    grads = backward(params, trace, loss_gradient(pred, targets) / n)
    return float(np.mean(loss(pred, targets))), grads


@dataclass(frozen=True)
class TrainExample:
    user_vec: np.ndarray
    item_vec: np.ndarray
    target: float


@dataclass(frozen=True, eq=False)
class ExampleSet:
    """Training examples stored column-wise."""

    user_vecs: np.ndarray
    item_vecs: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return len(self.targets)

    @classmethod
    def from_examples(cls, examples: Sequence[TrainExample]) -> ExampleSet:
        return cls(np.stack([e.user_vec for e in examples]).astype(np.float64),
                   np.stack([e.item_vec for e in examples]).astype(np.float64),
                   np.asarray([e.target for e in examples], dtype=np.float64))


def train(params: TowerNetworkParams, examples: ExampleSet | Sequence[TrainExample],
          config: NetworkConfig | None = None) -> tuple[TowerNetworkParams, list[float]]:
    """Mini-batch SGD with classical momentum on the mean squared error.

    Examples are reshuffled every epoch and dropout masks are drawn from the
    same seeded generator, so a run is reproducible from ``config.seed``.
    Returns new parameters and the per-epoch mean training loss.

    Raises:
        TrainingError: the epoch loss or the parameters became non-finite.
    """
    config = config or params.config
    if not isinstance(examples, ExampleSet):
        examples = ExampleSet.from_examples(list(examples))
    n = len(examples)
    if n == 0:
        raise ValueError("no training examples")
    params = replace(params.copy(), config=replace(params.config, dropout_tower=config.dropout_tower,
                                                   dropout_shared=config.dropout_shared))
    rng = np.random.default_rng([config.seed, 1])
    tensors = params.tensors()
    velocity = {k: np.zeros_like(v) for k, v in tensors.items()}
    trace = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch_loss, grads = batch_loss_and_gradients(
                params, examples.user_vecs[idx], examples.item_vecs[idx], examples.targets[idx],
                "train", rng)
            total += batch_loss * len(idx)
            for name, g in grads.named():
                v = velocity[name]
                v *= config.momentum
                v -= config.learning_rate * g
                tensors[name] += v
        mean = total / n
        if not math.isfinite(mean) or not params.is_finite():
            raise TrainingError("network loss is not finite", epoch)
        trace.append(mean)
        log.info("network epoch %d/%d loss %.6f", epoch, config.epochs, mean)
    return params, trace


def predict_preference(params: TowerNetworkParams, user_vec, item_vec):
    """Inference-mode output; scalar for single vectors, array for batches."""
    return forward(params, user_vec, item_vec, "infer")[0]


def write_checkpoint(params: TowerNetworkParams, stream: IO[str], seed: int | None = None,
                     meta: dict | None = None) -> None:
    stream.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n")
    stream.write("config " + json.dumps(params.config.to_dict(), sort_keys=True) + "\n")
    stream.write(f"seed {params.config.seed if seed is None else seed}\n")
    stream.write("meta " + json.dumps(meta or {}, sort_keys=True) + "\n")
    named = list(params.named())
    stream.write(f"tensors {len(named)}\n")
    for name, arr in named:
        mat = arr.reshape(1, -1) if arr.ndim == 1 else arr
        stream.write(f"{name} {mat.shape[0]} {mat.shape[1]}\n")
        for row in mat:
            stream.write(" ".join(format_float(x) for x in row))
            stream.write("\n")


def read_checkpoint(stream: IO[str], source: str | None = None) -> tuple[TowerNetworkParams, int, dict]:
    """Inverse of :func:`write_checkpoint`; returns ``(params, seed, meta)``."""
    lines = iter(enumerate(stream, start=1))
    last = 0

    def next_line(what: str) -> tuple[int, str]:
        nonlocal last
        try:
            last, line = next(lines)
        except StopIteration:
            raise ParseError(f"unexpected end of file, expected {what}", last + 1, source) from None
        return last, line.rstrip("\n")

    def keyed(key: str) -> tuple[int, str]:
        lineno, line = next_line(key)
        head, _, rest = line.partition(" ")
        if head != key:
            raise ParseError(f"expected '{key}' line", lineno, source)
        return lineno, rest

    lineno, line = next_line("header")
    parts = line.split()
    if len(parts) != 2 or parts[0] != CHECKPOINT_MAGIC:
        raise ParseError("not a rexnet checkpoint", lineno, source)
    if int(parts[1]) != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {parts[1]}", lineno, source)
    try:
        lineno, text = keyed("config")
        config = NetworkConfig.from_dict(json.loads(text))
        lineno, text = keyed("seed")
        seed = int(text)
        lineno, text = keyed("meta")
        meta = json.loads(text)
        lineno, text = keyed("tensors")
        count = int(text)
    except (ValueError, TypeError, KeyError) as exc:
        raise ParseError(f"bad checkpoint header ({exc})", lineno, source) from None
    tensors = {}
    for _ in range(count):
        lineno, line = next_line("tensor header")
        parts = line.split()
        if len(parts) != 3 or not parts[1].isdigit() or not parts[2].isdigit():
            raise ParseError("tensor header must be '<name> <rows> <cols>'", lineno, source)
        name, rows, cols = parts[0], int(parts[1]), int(parts[2])
        mat = np.empty((rows, cols))
        for r in range(rows):
            lineno, line = next_line(f"row {r} of {name}")
            values = line.split()
            if len(values) != cols:
                raise ParseError(f"{name}: expected {cols} values, got {len(values)}", lineno, source)
            try:
                mat[r] = [float(x) for x in values]
            except ValueError as exc:
                raise ParseError(f"{name}: {exc}", lineno, source) from None
        tensors[name] = mat[0] if name.endswith(".bias") else mat
    return TowerNetworkParams.from_tensors(config, tensors), seed, meta


def save_checkpoint(params: TowerNetworkParams, path: str | os.PathLike, seed: int | None = None,
                    meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_checkpoint(params, fh, seed, meta)


def load_checkpoint(path: str | os.PathLike) -> tuple[TowerNetworkParams, int, dict]:
    with open(path, encoding="utf-8") as fh:
        return read_checkpoint(fh, os.fspath(path))
