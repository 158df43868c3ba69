import time

import numpy as np
import pytest

import oracles
from vitret.config import ModelConfig
from vitret.lstm import LstmModel, LstmParams, lstm_cell, lstm_forward, lstm_layer, lstm_train
from vitret.tensor import ShapeError, Tensor, cross_entropy, grad_check, sigmoid


def zero_params(d_in, h):
    return LstmParams(Tensor(np.zeros((d_in, 4 * h)), True), Tensor(np.zeros((h, 4 * h)), True),
                      Tensor(np.zeros(4 * h), True))


def test_zero_fixed_point():
    h, c = lstm_cell(Tensor(np.ones(3)), Tensor(np.zeros(2)), Tensor(np.zeros(2)), zero_params(3, 2))
    np.testing.assert_array_equal(h.data, 0.0)
    np.testing.assert_array_equal(c.data, 0.0)


def test_large_forget_bias_remembers(rng):
    p = zero_params(3, 4)
    p.b.data[4:8] = 50.0
    c = rng.normal(size=4)
    _, c_new = lstm_cell(Tensor(rng.normal(size=3)), Tensor(np.zeros(4)), Tensor(c), p)
    np.testing.assert_allclose(c_new.data, c, atol=1e-12)


def test_cell_matches_scalar_oracle(rng):
    p = LstmParams.create(5, 4, rng)
    p.b.data = rng.normal(size=16)
    x, h, c = rng.normal(size=5), rng.normal(size=4) * 0.5, rng.normal(size=4)
    h_new, c_new = lstm_cell(Tensor(x), Tensor(h), Tensor(c), p)
    ref_h, ref_c = oracles.lstm_cell(list(x), list(h), list(c), p.w_x.data.tolist(), p.w_h.data.tolist(),
                                     p.b.data.tolist())
    np.testing.assert_allclose(h_new.data, ref_h, atol=1e-12)
    np.testing.assert_allclose(c_new.data, ref_c, atol=1e-12)


def test_layer_matches_repeated_cell(rng):
    p = LstmParams.create(3, 4, rng)
    xs = rng.normal(size=(2, 5, 3))
    out = lstm_layer(Tensor(xs), p).data
    for b in range(2):
        h, c = Tensor(np.zeros(4)), Tensor(np.zeros(4))
        for t in range(5):
            h, c = lstm_cell(Tensor(xs[b, t]), h, c, p)
            np.testing.assert_allclose(out[b, t], h.data, atol=1e-12)


def test_gate_and_state_bounds(rng):
    p = LstmParams.create(4, 6, rng)
    x = rng.normal(size=(50, 4)) * 3
    h = Tensor(rng.uniform(-1, 1, size=(50, 6)))
    c = Tensor(rng.normal(size=(50, 6)) * 5)
    wx, wh, b = p.gate("i")
    gate = sigmoid(Tensor(x @ wx + h.data @ wh + b)).data
    assert np.all((gate > 0) & (gate < 1))
    h_new, c_new = lstm_cell(Tensor(x), h, c, p)
    assert np.all(np.abs(h_new.data) < 1)
    assert np.all(np.isfinite(c_new.data))


def test_forget_bias_initialised_to_one(rng):
    p = LstmParams.create(3, 5, rng)
    np.testing.assert_array_equal(p.gate("f")[2], 1.0)
    for g in "igo":
        np.testing.assert_array_equal(p.gate(g)[2], 0.0)


def test_cell_shape_mismatch(rng):
    p = LstmParams.create(3, 2, rng)
    with pytest.raises(ShapeError):
        lstm_cell(Tensor(np.zeros(4)), Tensor(np.zeros(2)), Tensor(np.zeros(2)), p)


def test_grad_check_two_steps(rng):
    p = LstmParams.create(2, 3, rng)
    p.b.data = rng.normal(size=12) * 0.3
    xs = Tensor(rng.normal(size=(1, 2, 2)))
    proj = rng.normal(size=(1, 2, 3))
    err = grad_check(lambda x, *ps: (lstm_layer(x, p) * proj).sum(), [xs] + p.parameters())
    assert err < 1e-4


def test_forward_contract_and_errors(rng):
    cfg = ModelConfig(lstm_units=5, lstm_layers=2)
    model = LstmModel.create(3, 4, cfg)
    probs = lstm_forward(rng.normal(size=(6, 3)), model)
    assert probs.shape == (4,)
    assert abs(probs.data.sum() - 1) < 1e-6
    with pytest.raises(ValueError):
        lstm_forward(np.zeros((0, 3)), model)
    with pytest.raises(ShapeError):
        lstm_forward(np.zeros((4, 2)), model)


def test_stacked_layer_sizes():
    model = LstmModel.create(7, 2, ModelConfig(lstm_units=4, lstm_layers=3))
    assert [(l.input_size, l.hidden_size) for l in model.layers] == [(7, 4), (4, 4), (4, 4)]
    with pytest.raises(ValueError):
        LstmModel([model.layers[0], LstmParams.create(5, 4, np.random.default_rng(0))],
                  model.classifier_w, model.classifier_b)


def test_order_sensitivity(rng):
    model = LstmModel.create(3, 3, ModelConfig(lstm_units=5), seed=2)
    model.classifier_w.data = rng.normal(size=model.classifier_w.shape)
    x = rng.normal(size=(5, 3))
    same = np.tile(x[0], (5, 1))
    np.testing.assert_allclose(lstm_forward(same, model).data, lstm_forward(same[::-1], model).data, atol=1e-15)
    assert np.max(np.abs(lstm_forward(x, model).data - lstm_forward(x[[3, 1, 4, 0, 2]], model).data)) > 1e-6


def test_grad_check_model(rng):
    model = LstmModel.create(2, 2, ModelConfig(lstm_units=3, lstm_layers=2), seed=1)
    model.classifier_w.data = rng.normal(size=model.classifier_w.shape)
    x = rng.normal(size=(2, 3, 2))
    assert grad_check(lambda *ps: cross_entropy(lstm_forward(x, model), [0, 1]), model.parameters()) < 1e-4


def test_inference_time_linear_in_length(rng):
    model = LstmModel.create(64, 4, ModelConfig(lstm_units=64))

    def per_sequence(T):
        x = rng.normal(size=(1, T, 64))
        lstm_forward(x, model)
        best = np.inf
        for _ in range(5):
            start = time.perf_counter()
            for _ in range(20):
                lstm_forward(x, model)
            best = min(best, time.perf_counter() - start)
        return best

    assert per_sequence(40) >= 1.8 * per_sequence(20)


def test_overfit_single_sequence(tiny_dataset):
    one = tiny_dataset.subset([5] * 4)
    cfg = ModelConfig(lstm_units=8, epochs=40, batch_size=4, learning_rate=2e-2)
    model, history = lstm_train(one, None, cfg, seed=0)
    assert history[-1].loss < 0.05
    assert lstm_forward(one.samples[0].frames.reshape(4, -1).astype(float), model).data.argmax() == one.samples[0].label


def test_train_lr_zero_and_determinism(tiny_dataset):
    cfg = ModelConfig(lstm_units=4, epochs=2, learning_rate=0.0)
    model = LstmModel.create(64, 2, cfg, seed=3)
    before = [p.data.copy() for p in model.parameters()]
    lstm_train(tiny_dataset, None, cfg, model=model)
    for b, p in zip(before, model.parameters()):
        np.testing.assert_array_equal(b, p.data)
    cfg = cfg.with_updates(learning_rate=1e-2)
    assert lstm_train(tiny_dataset, tiny_dataset, cfg, seed=9)[1] == lstm_train(tiny_dataset, tiny_dataset, cfg, seed=9)[1]
