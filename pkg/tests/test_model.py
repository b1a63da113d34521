import json
import math

import numpy as np
import pytest

from confage.data import GenConfig, generate
from confage.loss import LossConfig, PredictionBatch, loss_forward
from confage.model import (
    CheckpointError,
    ModelParams,
    ModelSpec,
    TrainConfig,
    TrainingDivergedError,
    forward,
    init_params,
    load_model,
    loss_and_grads,
    save_model,
    split_indices,
    train,
    zeros,
)
from oracles import central_difference


@pytest.fixture(scope="module")
def small_run():
    ds = generate(GenConfig(n=2000, seed=11))
    spec = ModelSpec(ds.input_dim)
    params, history = train(ds, spec, train_cfg=TrainConfig(epochs=30, seed=5))
    return ds, spec, params, history


def test_zero_params_give_softplus_floor():
    spec = ModelSpec(3)
    mu, sigma = forward(zeros(spec, 0.05), spec, np.random.default_rng(0).normal(size=(7, 3)))
    assert np.all(mu == 0)
    np.testing.assert_allclose(sigma, math.log(2) + 0.05, rtol=1e-15)


def test_identical_rows_identical_outputs():
    spec = ModelSpec(4, (8,))
    p = init_params(spec, 1)
    x = np.tile(np.arange(4.0), (5, 1))
    mu, sigma = forward(p, spec, x)
    assert np.all(mu == mu[0]) and np.all(sigma == sigma[0])


def test_rows_are_independent(rng):
    spec = ModelSpec(6, (10, 5), activation="tanh")
    p = init_params(spec, 3)
    x = rng.normal(size=(9, 6))
    mu, sigma = forward(p, spec, x)
    mu1, sigma1 = forward(p, spec, x[:1])
    assert mu1[0] == pytest.approx(mu[0], rel=1e-15) and sigma1[0] == pytest.approx(sigma[0], rel=1e-15)


def test_shape_mismatch():
    spec = ModelSpec(4)
    with pytest.raises(ValueError, match="shape"):
        forward(init_params(spec, 0), spec, np.zeros((2, 5)))


def test_init_sigma_near_one_point_three():
    spec = ModelSpec(16)
    p = init_params(spec, 0)
    assert p.biases[-1][1] == 1.0
    # softplus(1) + 0.05
    assert forward(ModelParams(zeros(spec).weights, p.biases, 0.05), spec, np.zeros((1, 16)))[1][0] == pytest.approx(
        math.log1p(math.e) + 0.05
    )


@pytest.mark.parametrize("sigma_map", ["softplus", "exp"])
@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_sigma_floor_respected(sigma_map, activation, rng):
    spec = ModelSpec(5, (7,), activation, sigma_map)
    p = init_params(spec, 2, sigma_floor=0.3)
    p.biases[-1][1] = -50.0
    _, sigma = forward(p, spec, rng.normal(size=(50, 5)))
    assert np.all(sigma >= 0.3)


def _param_fd(spec, params, x, y, cfg):
    flat_shapes = [(w.shape, b.shape) for w, b in zip(params.weights, params.biases)]

    def unflatten(v):
        v = np.asarray(v)
        ws, bs, k = [], [], 0
        for ws_shape, bs_shape in flat_shapes:
            n = int(np.prod(ws_shape))
            ws.append(v[k:k + n].reshape(ws_shape))
            k += n
            bs.append(v[k:k + bs_shape[0]].copy())
            k += bs_shape[0]
        return ModelParams(ws, bs, params.sigma_floor)

    def f(v):
        mu, sigma = forward(unflatten(v), spec, x)
        return loss_forward(PredictionBatch(mu, sigma, y), cfg).l_total

    num = np.array(central_difference(f, params.flat().tolist(), 1e-6))
    _, gw, gb = loss_and_grads(params, spec, x, y, cfg)
    ana = np.concatenate([a.ravel() for pair in zip(gw, gb) for a in pair])
    return ana, num


@pytest.mark.parametrize("sigma_map", ["softplus", "exp"])
def test_micro_network_gradient(sigma_map):
    # one input, no hidden layer: 2 weights + 2 biases
    spec = ModelSpec(1, (), sigma_map=sigma_map)
    params = ModelParams([np.array([[3.0, 0.2]])], [np.array([20.0, 0.5])], 0.05)
    x = np.array([[1.5], [2.5], [0.7]])
    y = np.array([22.0, 31.0, 19.0])
    ana, num = _param_fd(spec, params, x, y, LossConfig())
    assert ana.size == 4
    np.testing.assert_allclose(ana, num, rtol=1e-4)


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_hidden_network_gradient(activation, rng):
    spec = ModelSpec(3, (4, 3), activation)
    params = init_params(spec, 9, mu_bias=30.0)
    x = rng.normal(size=(6, 3))
    y = rng.uniform(3, 91, 6)
    ana, num = _param_fd(spec, params, x, y, LossConfig())
    np.testing.assert_allclose(ana, num, rtol=1e-4, atol=1e-7)


def test_split_is_seeded_and_disjoint():
    a_tr, a_va = split_indices(100, 0.2, 3)
    b_tr, b_va = split_indices(100, 0.2, 3)
    assert np.array_equal(a_tr, b_tr) and np.array_equal(a_va, b_va)
    assert a_va.size == 20 and not set(a_tr) & set(a_va)


def test_training_beats_constant_predictor(small_run):
    ds, spec, params, history = small_run
    tr, va = split_indices(len(ds), 0.2, 5)
    mu, _ = forward(params, spec, ds.features[va])
    model_mae = np.mean(np.abs(mu - ds.ages[va]))
    baseline = np.mean(np.abs(ds.ages[tr].mean() - ds.ages[va]))
    assert model_mae < baseline
    assert history[-1]["val_mae"] == pytest.approx(model_mae, rel=1e-12)


def test_loss_descends(small_run):
    history = small_run[3]
    assert history[-1]["train_l_total"] < history[0]["train_l_total"]


def test_history_columns(small_run):
    row = small_run[3][0]
    for key in ("train_l_total", "train_l_reg", "train_l_std", "train_l_dist",
                "val_l_total", "val_l_reg", "val_l_std", "val_l_dist"):
        assert math.isfinite(row[key])


def test_training_is_bit_reproducible():
    ds = generate(GenConfig(n=300, seed=2))
    spec = ModelSpec(ds.input_dim, (8,))
    cfg = TrainConfig(epochs=3, seed=4)
    a, ha = train(ds, spec, train_cfg=cfg)
    b, hb = train(ds, spec, train_cfg=cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.weights + a.biases, b.weights + b.biases))
    assert ha == hb
    c, _ = train(ds, spec, train_cfg=TrainConfig(epochs=3, seed=5))
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_divergence_reports_epoch_and_batch():
    ds = generate(GenConfig(n=200, seed=1))
    spec = ModelSpec(ds.input_dim, (8,), sigma_map="exp")
    with np.errstate(all="ignore"), pytest.raises(TrainingDivergedError) as info:
        train(ds, spec, train_cfg=TrainConfig(epochs=5, learning_rate=1e12, optimizer="sgd"))
    assert info.value.epoch >= 1 and info.value.batch >= 0
    assert "epoch" in str(info.value)


def test_train_rejects_bad_ages():
    ds = generate(GenConfig(n=20, seed=1))
    ds.ages[3] = 120.0
    with pytest.raises(ValueError):
        train(ds, ModelSpec(ds.input_dim), train_cfg=TrainConfig(epochs=1))


def test_checkpoint_round_trip(tmp_path, small_run):
    ds, spec, params, _ = small_run
    path = tmp_path / "m.json"
    save_model(path, params, spec, LossConfig())
    p2, spec2, loss2, _ = load_model(path)
    assert spec2 == spec and loss2 == LossConfig()
    for a, b in zip(params.weights + params.biases, p2.weights + p2.biases):
        assert np.array_equal(a, b)
    m1, s1 = forward(params, spec, ds.features)
    m2, s2 = forward(p2, spec2, ds.features)
    assert np.array_equal(m1, m2) and np.array_equal(s1, s2)


def test_truncated_checkpoint(tmp_path):
    spec = ModelSpec(3, (4,))
    path = tmp_path / "m.json"
    save_model(path, init_params(spec, 0), spec)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(CheckpointError, match="not valid JSON"):
        load_model(path)


def test_version_mismatch(tmp_path):
    spec = ModelSpec(3, (4,))
    path = tmp_path / "m.json"
    save_model(path, init_params(spec, 0), spec)
    doc = json.loads(path.read_text())
    doc["format_version"] = 2
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match="unsupported format_version 2"):
        load_model(path)


@pytest.mark.parametrize(
    "mutate, field",
    [
        (lambda d: d.pop("layers"), "layers"),
        (lambda d: d["layers"][1].update(weights=d["layers"][1]["weights"][:-1]), "layers[1].weights"),
        (lambda d: d["layers"][0].update(shape=[9, 9]), "layers[0].shape"),
        (lambda d: d["model_spec"].pop("activation"), "activation"),
        (lambda d: d["layers"][0]["bias"].__setitem__(0, "x"), "layers[0].bias"),
    ],
)
def test_malformed_checkpoint_names_field(tmp_path, mutate, field):
    spec = ModelSpec(3, (4,))
    path = tmp_path / "m.json"
    save_model(path, init_params(spec, 0), spec)
    doc = json.loads(path.read_text())
    mutate(doc)
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match=field.replace("[", r"\[").replace("]", r"\]")):
        load_model(path)
