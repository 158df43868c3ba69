import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from vitret.config import ModelConfig
from vitret.tensor import ShapeError, Tensor, grad_check, layer_norm, matmul, softmax, cross_entropy
from vitret.transformer import (
    EncoderParams,
    ReTModel,
    apply_mask,
    embed_and_encode,
    encoder_block,
    multi_head_attention,
    positional_encoding,
    ret_forward,
    ret_train,
    scaled_dot_product_attention,
)


def make_encoder(rng, d=8, heads=2, dense=16):
    p = EncoderParams.create(d, heads, dense, rng)
    # non-trivial biases and norms so every path is exercised
    for t in (p.bq, p.bk, p.bv, p.bo, p.ff1_b, p.ff2_b, p.ln1_bias, p.ln2_bias):
        t.data = rng.normal(scale=0.1, size=t.shape)
    for t in (p.ln1_gain, p.ln2_gain):
        t.data = 1.0 + rng.normal(scale=0.1, size=t.shape)
    return p


# ---- positional encoding


def test_positional_encoding_row_zero_and_bounds():
    pe = positional_encoding(1000, 128).table
    np.testing.assert_array_equal(pe[0, 0::2], 0.0)
    np.testing.assert_array_equal(pe[0, 1::2], 1.0)
    assert np.all(np.abs(pe) <= 1.0)


def test_positional_encoding_spot_values():
    pe = positional_encoding(50, 16).table
    assert abs(pe[1, 0] - 0.84147) < 1e-5
    for pos, i in [(1, 0), (7, 3), (49, 7)]:
        angle = pos / 10000 ** (2 * i / 16)
        assert pe[pos, 2 * i] == pytest.approx(math.sin(angle), abs=1e-12)
        assert pe[pos, 2 * i + 1] == pytest.approx(math.cos(angle), abs=1e-12)


def test_positional_encoding_rejects_odd_width():
    with pytest.raises(ValueError):
        positional_encoding(10, 7)


# ---- embedding


def test_embed_zero_input_is_positional_rows():
    cfg = ModelConfig(sequence_length=5, projection_dim=8, dense_dim=8, num_heads=2)
    model = ReTModel.create(3, 2, cfg)
    out = embed_and_encode(Tensor(np.zeros((5, 3))), model)
    np.testing.assert_array_equal(out.data, model.pe.table[:5])


def test_embed_identity_projection(rng):
    cfg = ModelConfig(sequence_length=4, projection_dim=6, dense_dim=8, num_heads=2)
    model = ReTModel.create(6, 2, cfg)
    model.input_w.data = np.eye(6)
    x = rng.normal(size=(4, 6))
    np.testing.assert_allclose(embed_and_encode(Tensor(x), model).data, x + model.pe.table[:4], atol=0)


def test_embed_minus_pe_is_projection(rng):
    cfg = ModelConfig(sequence_length=4, projection_dim=6, dense_dim=8, num_heads=2)
    model = ReTModel.create(5, 2, cfg, seed=3)
    model.input_b.data = rng.normal(size=6)
    x = rng.normal(size=(4, 5))
    proj = np.array([oracles.vec_mat(r, model.input_w.data, model.input_b.data) for r in x])
    np.testing.assert_allclose(embed_and_encode(Tensor(x), model).data - model.pe.table[:4], proj, atol=1e-12)


def test_embed_rejects_long_sequence():
    model = ReTModel.create(3, 2, ModelConfig(sequence_length=4, projection_dim=4, dense_dim=4, num_heads=2))
    with pytest.raises(ShapeError):
        embed_and_encode(Tensor(np.zeros((5, 3))), model)


# ---- attention


def test_attention_identity_inputs():
    eye = Tensor(np.eye(3))
    out, w = scaled_dot_product_attention(eye, eye, eye)
    a = math.exp(1 / math.sqrt(3))
    diag, off = a / (a + 2), 1 / (a + 2)
    expected = np.full((3, 3), off) + np.eye(3) * (diag - off)
    np.testing.assert_allclose(w.data, expected, atol=1e-15)
    np.testing.assert_allclose(out.data, expected, atol=1e-15)


def test_attention_single_element(rng):
    v = rng.normal(size=(1, 4))
    out, w = scaled_dot_product_attention(Tensor(rng.normal(size=(1, 3))), Tensor(rng.normal(size=(1, 3))), Tensor(v))
    np.testing.assert_array_equal(w.data, [[1.0]])
    np.testing.assert_allclose(out.data, v, atol=1e-15)


def test_attention_uniform_when_keys_orthogonal_to_queries():
    q = Tensor(np.tile([1.0, 0.0, 0.0], (2, 1)))
    k = Tensor(np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0], [0.0, 0.0, 2.0]]))
    _, w = scaled_dot_product_attention(q, k, Tensor(np.ones((4, 2))))
    np.testing.assert_allclose(w.data, 0.25, atol=1e-15)


def test_attention_dimension_errors():
    with pytest.raises(ShapeError):
        scaled_dot_product_attention(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))), Tensor(np.ones((2, 4))))
    with pytest.raises(ShapeError):
        scaled_dot_product_attention(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4))))


def test_attention_matches_composed_primitives(rng):
    q, k, v = rng.normal(size=(5, 4)), rng.normal(size=(6, 4)), rng.normal(size=(6, 3))
    out, w = scaled_dot_product_attention(Tensor(q), Tensor(k), Tensor(v))
    composed = matmul(softmax(matmul(Tensor(q), Tensor(k.T)) * (1 / 2.0)), Tensor(v))
    np.testing.assert_allclose(out.data, composed.data, atol=1e-12)
    ref, ref_w = oracles.attention(q.tolist(), k.tolist(), v.tolist())
    np.testing.assert_allclose(out.data, ref, atol=1e-12)
    np.testing.assert_allclose(w.data, ref_w, atol=1e-12)


# ---- masking


def test_mask_uniform_scores():
    w = softmax(apply_mask(Tensor(np.zeros((3, 5))), 3)).data
    np.testing.assert_allclose(w, np.tile([0.25, 0.25, 0.25, 0.25, 0.0], (3, 1)), atol=1e-12)


def test_mask_full_visibility_is_unmasked(rng):
    q, k, v = (Tensor(rng.normal(size=(4, 3))) for _ in range(3))
    a, _ = scaled_dot_product_attention(q, k, v, mask=3)
    b, _ = scaled_dot_product_attention(q, k, v)
    np.testing.assert_array_equal(a.data, b.data)


def test_mask_first_only(rng):
    _, w = scaled_dot_product_attention(*(Tensor(rng.normal(size=(4, 3))) for _ in range(3)), mask=0)
    np.testing.assert_allclose(w.data[:, 0], 1.0, atol=1e-12)


def test_mask_out_of_range():
    with pytest.raises(IndexError):
        apply_mask(Tensor(np.zeros((2, 3))), 3)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 6), st.floats(0.1, 30), st.data())
def test_attention_rows_stochastic_and_masked_columns_zero(n, m, d, scale, data):
    seed = data.draw(st.integers(0, 10**6))
    last = data.draw(st.integers(0, m - 1))
    r = np.random.default_rng(seed)
    q, k, v = r.normal(size=(n, d)) * scale, r.normal(size=(m, d)) * scale, r.normal(size=(m, 2))
    for mask in (None, last):
        _, w = scaled_dot_product_attention(Tensor(q), Tensor(k), Tensor(v), mask)
        assert np.all(w.data >= 0)
        np.testing.assert_allclose(w.data.sum(axis=1), 1.0, atol=1e-6)
        if mask is not None:
            assert np.all(w.data[:, last + 1:] <= 1e-12)


def test_attention_permutation_equivariance(rng):
    x = rng.normal(size=(5, 8))
    perm = rng.permutation(5)
    out, _ = scaled_dot_product_attention(Tensor(x), Tensor(x), Tensor(x))
    out_p, _ = scaled_dot_product_attention(Tensor(x[perm]), Tensor(x[perm]), Tensor(x[perm]))
    np.testing.assert_allclose(out_p.data, out.data[perm], atol=1e-12)


# ---- multi-head attention


def test_mha_single_head_identity_projections(rng):
    p = EncoderParams.create(4, 1, 8, rng)
    for w in (p.wq, p.wk, p.wv, p.wo):
        w.data = np.eye(4)
    x = rng.normal(size=(3, 4))
    ref, _ = scaled_dot_product_attention(Tensor(x), Tensor(x), Tensor(x))
    np.testing.assert_allclose(multi_head_attention(Tensor(x), Tensor(x), Tensor(x), p).data, ref.data, atol=1e-12)


def test_mha_matches_per_head_oracle(rng):
    p = make_encoder(rng, d=8, heads=2)
    x = rng.normal(size=(5, 8))
    got = multi_head_attention(Tensor(x), Tensor(x), Tensor(x), p).data
    ref = oracles.multi_head_attention(x, p.wq.data, p.bq.data, p.wk.data, p.bk.data, p.wv.data, p.bv.data,
                                       p.wo.data, p.bo.data, 2)
    np.testing.assert_allclose(got, ref, atol=1e-10)


def test_mha_head_permutation_symmetry(rng):
    p = make_encoder(rng, d=8, heads=4)
    x = Tensor(rng.normal(size=(3, 8)))
    base = multi_head_attention(x, x, x, p).data
    order = [2, 0, 3, 1]
    cols = np.concatenate([np.arange(h * 2, h * 2 + 2) for h in order])
    for w, b in ((p.wq, p.bq), (p.wk, p.bk), (p.wv, p.bv)):
        w.data, b.data = w.data[:, cols], b.data[cols]
    p.wo.data = p.wo.data[cols, :]
    np.testing.assert_allclose(multi_head_attention(x, x, x, p).data, base, atol=1e-12)


def test_mha_dimension_mismatch(rng):
    p = EncoderParams.create(8, 2, 8, rng)
    x = Tensor(np.ones((3, 6)))
    with pytest.raises(ShapeError):
        multi_head_attention(x, x, x, p)


def test_encoder_rejects_indivisible_heads(rng):
    with pytest.raises(ValueError):
        EncoderParams.create(8, 3, 8, rng)


# ---- encoder block


@settings(max_examples=27, deadline=None)
@given(st.sampled_from([8, 16, 32]), st.sampled_from([1, 2, 4]), st.sampled_from([1, 4, 20]))
def test_encoder_block_preserves_shape(d, heads, seq):
    r = np.random.default_rng(d * 100 + heads * 10 + seq)
    p = EncoderParams.create(d, heads, 2 * d, r)
    assert encoder_block(Tensor(r.normal(size=(seq, d))), p).shape == (seq, d)
    assert encoder_block(Tensor(r.normal(size=(2, seq, d))), p).shape == (2, seq, d)


def test_encoder_block_residual_path_only(rng):
    p = EncoderParams.create(8, 2, 16, rng)
    for t in (p.wq, p.wk, p.wv, p.wo, p.ff1_w, p.ff2_w):
        t.data = np.zeros_like(t.data)
    x = Tensor(rng.normal(size=(4, 8)))
    ones, zeros = Tensor(np.ones(8)), Tensor(np.zeros(8))
    expected = layer_norm(layer_norm(x, ones, zeros), ones, zeros)
    np.testing.assert_allclose(encoder_block(x, p).data, expected.data, atol=1e-12)


def test_encoder_block_grad_check(rng):
    p = make_encoder(rng, d=8, heads=2)
    x = Tensor(rng.normal(size=(4, 8)))
    proj = rng.normal(size=(4, 8))
    err = grad_check(lambda x, *ps: (encoder_block(x, p) * proj).sum(), [x] + p.parameters())
    assert err < 1e-4


# ---- ReT model


@pytest.fixture
def ret_cfg():
    return ModelConfig(sequence_length=4, projection_dim=8, dense_dim=16, num_heads=2, transformer_layers=1)


def test_ret_forward_contract(rng, ret_cfg):
    model = ReTModel.create(5, 3, ret_cfg)
    probs = ret_forward(rng.normal(size=(4, 5)), model)
    assert probs.shape == (3,)
    assert abs(probs.data.sum() - 1) < 1e-6
    batch = ret_forward(rng.normal(size=(6, 4, 5)), model)
    assert batch.shape == (6, 3)
    np.testing.assert_allclose(batch.data.sum(axis=1), 1.0, atol=1e-6)


def test_ret_untrained_near_uniform(rng, ret_cfg):
    model = ReTModel.create(5, 4, ret_cfg)
    probs = ret_forward(rng.normal(size=(4, 5)) * 10, model).data
    assert np.all(np.abs(probs - 0.25) < 0.05)


def test_ret_wrong_length(ret_cfg):
    model = ReTModel.create(5, 2, ret_cfg)
    with pytest.raises(ShapeError):
        ret_forward(np.zeros((3, 5)), model)


def test_ret_order_sensitive(rng, ret_cfg):
    model = ReTModel.create(5, 3, ret_cfg, seed=2)
    model.classifier_w.data = rng.normal(size=model.classifier_w.shape)
    x = rng.normal(size=(4, 5))
    a = ret_forward(x, model).data
    b = ret_forward(x[[2, 0, 3, 1]], model).data
    assert np.max(np.abs(a - b)) > 1e-6


def test_ret_grad_check(rng, ret_cfg):
    model = ReTModel.create(3, 2, ret_cfg, seed=1)
    model.classifier_w.data = rng.normal(scale=0.3, size=model.classifier_w.shape)
    x = rng.normal(size=(2, 4, 3))
    err = grad_check(lambda *ps: cross_entropy(ret_forward(x, model), [0, 1]), model.parameters())
    assert err < 1e-4


def test_ret_overfits_single_example(rng, ret_cfg, tiny_dataset):
    one = tiny_dataset.subset([0] * 8)
    cfg = ret_cfg.with_updates(epochs=50, batch_size=4, learning_rate=1e-2)
    model, history = ret_train(one, None, cfg, seed=0)
    assert history[-1].loss < 1e-2
    x = one.samples[0].frames.reshape(4, -1).astype(np.float64)
    assert ret_forward(x, model).data.argmax() == one.samples[0].label


def test_ret_train_zero_lr_keeps_params(ret_cfg, tiny_dataset):
    model = ReTModel.create(64, 2, ret_cfg, seed=5)
    before = [p.data.copy() for p in model.parameters()]
    ret_train(tiny_dataset, None, ret_cfg.with_updates(learning_rate=0.0), seed=0, model=model)
    for b, p in zip(before, model.parameters()):
        np.testing.assert_array_equal(b, p.data)


def test_ret_train_deterministic(ret_cfg, tiny_dataset):
    _, h1 = ret_train(tiny_dataset, tiny_dataset, ret_cfg.with_updates(epochs=3), seed=7)
    _, h2 = ret_train(tiny_dataset, tiny_dataset, ret_cfg.with_updates(epochs=3), seed=7)
    assert h1 == h2


def test_ret_train_rejects_bad_inputs(ret_cfg, tiny_dataset):
    with pytest.raises(ValueError):
        ret_train(tiny_dataset.subset([]), None, ret_cfg)
    model = ReTModel.create(64, 1, ret_cfg)
    with pytest.raises(ValueError, match="label"):
        ret_train(tiny_dataset, None, ret_cfg, model=model)
