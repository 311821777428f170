import io
from dataclasses import replace

import numpy as np
import pytest

from rexnet.errors import ParseError, TrainingError, ValidationError
from rexnet.neural import (
    ExampleSet,
    NetworkConfig,
    TrainExample,
    TowerNetworkParams,
    backward,
    forward,
    init_network,
    load_checkpoint,
    loss,
    loss_gradient,
    predict_preference,
    read_checkpoint,
    save_checkpoint,
    train,
    write_checkpoint,
    zero_network,
)

from oracles import network_rel_error

TINY = NetworkConfig(input_dim=4, tower_layers=(3, 2), shared_layer=2,
                     dropout_tower=0.0, dropout_shared=0.0)


def relu(x):
    return [max(v, 0.0) for v in x]


def affine(x, w, b):
    """x @ w + b written out element by element."""
    return [sum(x[r] * w[r][c] for r in range(len(x))) + b[c] for c in range(len(b))]


def oracle_forward(params: TowerNetworkParams, u, i):
    t = {k: v.tolist() for k, v in params.tensors().items()}
    n = len(params.config.tower_layers)
    a_u, a_i = list(u), list(i)
    for k in range(n):
        a_u = relu(affine(a_u, t[f"user.{k}.weight"], t[f"user.{k}.bias"]))
        a_i = relu(affine(a_i, t[f"item.{k}.weight"], t[f"item.{k}.bias"]))
    h = a_u + a_i
    if params.shared is not None:
        h = relu(affine(h, t["shared.weight"], t["shared.bias"]))
    return affine(h, t["output.weight"], t["output.bias"])[0]


def randomise(params: TowerNetworkParams, rng) -> TowerNetworkParams:
    """Random weights and biases, biases slightly positive so most ReLUs fire."""
    tensors = {k: (rng.normal(size=v.shape) + (0.3 if k.endswith("bias") else 0.0))
               for k, v in params.tensors().items()}
    return TowerNetworkParams.from_tensors(params.config, tensors)


def test_default_shapes_and_zero_biases():
    params = init_network(NetworkConfig(), seed=0)
    shapes = {k: v.shape for k, v in params.tensors().items()}
    assert [shapes[f"user.{k}.weight"] for k in range(4)] == [(100, 30), (30, 20), (20, 10), (10, 5)]
    assert [shapes[f"item.{k}.weight"] for k in range(4)] == [(100, 30), (30, 20), (20, 10), (10, 5)]
    assert shapes["shared.weight"] == (10, 5)
    assert shapes["output.weight"] == (5, 1)
    assert all(not v.any() for k, v in params.tensors().items() if k.endswith("bias"))


def test_init_is_deterministic():
    a, b = init_network(NetworkConfig(), 3), init_network(NetworkConfig(), 3)
    assert all(np.array_equal(x, y) for x, y in zip(a.tensors().values(), b.tensors().values()))
    c = init_network(NetworkConfig(), 4)
    assert not np.array_equal(a.tensors()["user.0.weight"], c.tensors()["user.0.weight"])


def test_glorot_limits():
    params = init_network(NetworkConfig(), 0)
    w = params.tensors()["user.0.weight"]
    assert np.abs(w).max() <= np.sqrt(6 / 130)


def test_config_rejects_growing_towers():
    with pytest.raises(ValueError):
        NetworkConfig(tower_layers=(5, 10))


def test_zero_network_predicts_zero():
    params = zero_network(NetworkConfig())
    rng = np.random.default_rng(0)
    assert predict_preference(params, rng.normal(size=100), rng.normal(size=100)) == 0.0


def test_output_bias_passes_through():
    tensors = zero_network(NetworkConfig()).tensors()
    tensors["output.bias"] = np.array([0.7])
    params = TowerNetworkParams.from_tensors(NetworkConfig(), tensors)
    assert predict_preference(params, np.ones(100), -np.ones(100)) == pytest.approx(0.7, abs=0)


@pytest.mark.parametrize("shared", [2, None])
def test_forward_matches_scalar_oracle(shared):
    config = replace(TINY, shared_layer=shared)
    rng = np.random.default_rng(1)
    for _ in range(20):
        params = randomise(init_network(config, 0), rng)
        u, i = rng.normal(size=4), rng.normal(size=4)
        assert predict_preference(params, u, i) == pytest.approx(oracle_forward(params, u, i), abs=1e-6)


def test_batch_forward_matches_single():
    params = randomise(init_network(TINY, 0), np.random.default_rng(2))
    rng = np.random.default_rng(3)
    u, i = rng.normal(size=(7, 4)), rng.normal(size=(7, 4))
    batch = predict_preference(params, u, i)
    singles = [predict_preference(params, u[k], i[k]) for k in range(7)]
    np.testing.assert_allclose(batch, singles, rtol=1e-12)


def test_dimension_mismatch_raises():
    params = init_network(TINY, 0)
    with pytest.raises(ValidationError):
        forward(params, np.zeros(5), np.zeros(4))


def test_loss_examples():
    assert loss(0.3, 0.3) == 0.0
    assert loss(0.5, 0.0) == 0.25
    assert loss_gradient(0.5, 0.0) == 1.0


@pytest.mark.parametrize("draw", range(12))
def test_network_gradient_matches_finite_differences(draw):
    rng = np.random.default_rng(50 + draw)
    config = replace(TINY, shared_layer=None if draw % 4 == 3 else 2)
    params = randomise(init_network(config, draw), rng)
    u, i = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    assert network_rel_error(params, u, i, rng.normal(size=3)) < 1e-3


def test_backward_respects_dropout_masks():
    config = replace(TINY, dropout_tower=0.5, dropout_shared=0.5)
    params = randomise(init_network(config, 0), np.random.default_rng(0))
    rng = np.random.default_rng(9)
    u, i = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    pred, trace = forward(params, u, i, "train", np.random.default_rng(1))
    grads = backward(params, trace, np.ones(4))
    # d(sum of predictions) / d(output bias) is the batch size
    assert grads.tensors()["output.bias"][0] == pytest.approx(4.0)
    masked_user = trace.user_act[-1] * trace.masks["user"]
    assert np.array_equal(trace.joint[:, :2], masked_user)


def test_dropout_expectation_matches_unmasked_activation():
    config = replace(NetworkConfig(input_dim=8, tower_layers=(6, 5), shared_layer=4),
                     dropout_tower=0.4, dropout_shared=0.2)
    params = randomise(init_network(config, 0), np.random.default_rng(4))
    rng = np.random.default_rng(5)
    u, i = rng.normal(size=8), rng.normal(size=8)
    _, clean = forward(params, u, i, "infer")
    passes = 10_000
    masked_sum = np.zeros_like(clean.user_act[-1])
    shared_sum = np.zeros_like(clean.shared_pre)
    mask_rng = np.random.default_rng(6)
    for _ in range(passes):
        _, t = forward(params, u, i, "train", mask_rng)
        masked_sum += t.user_act[-1] * t.masks["user"]
        shared_sum += t.masks["shared"]
    mean = masked_sum / passes
    active = clean.user_act[-1] > 0
    assert active.any()
    np.testing.assert_allclose(mean[active], clean.user_act[-1][active], rtol=0.02)
    np.testing.assert_allclose(shared_sum / passes, 1.0, rtol=0.02)


def test_relu_activations_non_negative():
    params = randomise(init_network(TINY, 0), np.random.default_rng(7))
    rng = np.random.default_rng(8)
    _, trace = forward(params, rng.normal(size=(50, 4)), rng.normal(size=(50, 4)))
    assert all((a >= 0).all() for a in trace.activations())


def test_one_step_moves_both_towers():
    config = replace(TINY, epochs=1, batch_size=1, momentum=0.0)
    live = 0
    for draw in range(20):
        rng = np.random.default_rng(100 + draw)
        params = randomise(init_network(config, 0), rng)
        example = TrainExample(rng.normal(size=4), rng.normal(size=4), 3.0)
        _, trace = forward(params, example.user_vec, example.item_vec)
        # the claim only holds while some ReLU path reaches each tower
        if not ((trace.shared_pre > 0).any() and (trace.user_act[-1] > 0).any()
                and (trace.item_act[-1] > 0).any()):
            continue
        live += 1
        new, _ = train(params, [example], config)
        before, after = params.tensors(), new.tensors()
        for tower in ("user", "item"):
            assert any(not np.array_equal(before[k], after[k]) for k in before if k.startswith(tower))
    assert live >= 5


def test_output_shift_keeps_rankings():
    params = randomise(init_network(TINY, 0), np.random.default_rng(12))
    rng = np.random.default_rng(13)
    u = np.broadcast_to(rng.normal(size=4), (30, 4))
    i = rng.normal(size=(30, 4))
    base = predict_preference(params, u, i)
    tensors = params.tensors()
    tensors["output.bias"] = tensors["output.bias"] + 2.5
    shifted = predict_preference(TowerNetworkParams.from_tensors(params.config, tensors), u, i)
    np.testing.assert_allclose(shifted - base, 2.5, atol=1e-12)
    assert np.array_equal(np.argsort(-base, kind="stable"), np.argsort(-shifted, kind="stable"))


def test_memorises_one_example():
    config = replace(TINY, epochs=300, batch_size=1)
    params = init_network(config, 0)
    rng = np.random.default_rng(14)
    example = TrainExample(rng.normal(size=4), rng.normal(size=4), 1.5)
    _, trace = train(params, [example], config)
    assert trace[-1] < 1e-3


def test_training_is_deterministic():
    config = replace(NetworkConfig(input_dim=6), epochs=3, seed=2)
    rng = np.random.default_rng(15)
    examples = ExampleSet(rng.normal(size=(200, 6)), rng.normal(size=(200, 6)), rng.normal(size=200))
    a, trace_a = train(init_network(config), examples, config)
    b, trace_b = train(init_network(config), examples, config)
    assert trace_a == trace_b
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.tensors().values(), b.tensors().values()))
    assert len(trace_a) == 3


def test_divergence_raises_with_epoch():
    config = replace(TINY, epochs=5)
    rng = np.random.default_rng(16)
    targets = rng.normal(size=64)
    targets[10] = np.nan
    examples = ExampleSet(rng.normal(size=(64, 4)), rng.normal(size=(64, 4)), targets)
    with pytest.raises(TrainingError) as info:
        train(init_network(config), examples, config)
    assert info.value.epoch == 1
    assert "epoch 1" in str(info.value)


@pytest.mark.parametrize("shared", [5, None])
def test_checkpoint_round_trip_is_bit_exact(tmp_path, shared):
    config = replace(NetworkConfig(input_dim=7), shared_layer=shared)
    params = randomise(init_network(config, 0), np.random.default_rng(17))
    path = tmp_path / "model.ckpt"
    save_checkpoint(params, path, seed=5, meta={"label": "glove"})
    again, seed, meta = load_checkpoint(path)
    assert seed == 5 and meta["label"] == "glove"
    assert again.config == params.config
    for (name, x), (name2, y) in zip(params.named(), again.named()):
        assert name == name2
        assert x.tobytes() == y.tobytes()
    save_checkpoint(again, tmp_path / "copy.ckpt", seed=5, meta={"label": "glove"})
    assert (tmp_path / "copy.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_records_tower_sizes():
    buf = io.StringIO()
    write_checkpoint(init_network(NetworkConfig(), 0), buf, seed=0)
    config_line = buf.getvalue().splitlines()[1]
    assert '"tower_layers": [30, 20, 10, 5]' in config_line


def test_truncated_checkpoint_names_line():
    buf = io.StringIO()
    write_checkpoint(init_network(TINY, 0), buf, seed=0)
    lines = buf.getvalue().splitlines()
    broken = "\n".join(lines[:8]) + "\n"
    with pytest.raises(ParseError) as info:
        read_checkpoint(io.StringIO(broken), source="model.ckpt")
    assert info.value.line == 9
