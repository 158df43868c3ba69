"""Attention, encoder blocks and the decoder-free ReT sequence classifier."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import init
from .config import ModelConfig
from .tensor import ShapeError, Tensor, dense, layer_norm, matmul, softmax

MASK_VALUE = -1e9


@dataclass
class PositionalEncodingTable:
    table: np.ndarray  # (max_len, d_model)

    @property
    def max_len(self) -> int:
        return self.table.shape[0]

    @property
    def d_model(self) -> int:
        return self.table.shape[1]


def positional_encoding(max_len: int, d_model: int) -> PositionalEncodingTable:
    """Sinusoidal table: sin on even columns, cos on odd, period growing with column."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if d_model < 2 or d_model % 2:
        raise ValueError(f"d_model must be even and >= 2, got {d_model}")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    two_i = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, two_i / d_model)
    table = np.empty((max_len, d_model))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return PositionalEncodingTable(table)


def apply_mask(scores: Tensor, last_visible: int) -> Tensor:
    """Suppress key columns after ``last_visible`` ahead of the softmax."""
    m = scores.shape[-1]
    if not 0 <= last_visible < m:
        raise IndexError(f"last_visible {last_visible} outside [0, {m})")
    penalty = np.zeros(m)
    penalty[last_visible + 1:] = MASK_VALUE
    return scores + penalty


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor, mask: int | None = None):
    """Return ``(softmax(q k^T / sqrt(d_k)) v, weights)``; batched over leading axes."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query {q.shape} and key {k.shape} widths differ")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key {k.shape} and value {v.shape} lengths differ")
    d_k = q.shape[-1]
    scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / np.sqrt(d_k))
    if mask is not None:
        scores = apply_mask(scores, mask)
    weights = softmax(scores, axis=-1)
    return matmul(weights, v), weights


@dataclass
class EncoderParams:
    """One encoder block. Head ``h`` owns columns ``h*d_k:(h+1)*d_k`` of wq/wk/wv."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ff1_w: Tensor
    ff1_b: Tensor
    ff2_w: Tensor
    ff2_b: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    num_heads: int
    activation: str = "relu"

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by {self.num_heads} heads")
        if self.ff2_w.shape[1] != self.d_model:
            raise ValueError("feed-forward output must equal d_model")

    @property
    def d_model(self) -> int:
        return self.wq.shape[0]

    @property
    def d_k(self) -> int:
        return self.d_model // self.num_heads

    @property
    def dense_dim(self) -> int:
        return self.ff1_w.shape[1]

    @classmethod
    def create(cls, d_model: int, num_heads: int, dense_dim: int, rng: np.random.Generator,
               activation: str = "relu") -> "EncoderParams":
        return cls(
            wq=init.glorot(rng, d_model, d_model), bq=init.zeros(d_model),
            wk=init.glorot(rng, d_model, d_model), bk=init.zeros(d_model),
            wv=init.glorot(rng, d_model, d_model), bv=init.zeros(d_model),
            wo=init.glorot(rng, d_model, d_model), bo=init.zeros(d_model),
            ff1_w=init.glorot(rng, d_model, dense_dim), ff1_b=init.zeros(dense_dim),
            ff2_w=init.glorot(rng, dense_dim, d_model), ff2_b=init.zeros(d_model),
            ln1_gain=init.ones(d_model), ln1_bias=init.zeros(d_model),
            ln2_gain=init.ones(d_model), ln2_bias=init.zeros(d_model),
            num_heads=num_heads, activation=activation,
        )

    def parameters(self) -> list[Tensor]:
        return [
            self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo,
            self.ff1_w, self.ff1_b, self.ff2_w, self.ff2_b,
            self.ln1_gain, self.ln1_bias, self.ln2_gain, self.ln2_bias,
        ]


def _split_heads(x: Tensor, num_heads: int) -> Tensor:
    *lead, n, d = x.shape
    x = x.reshape(*lead, n, num_heads, d // num_heads)
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return x.transpose(axes)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, d_k = x.shape
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return x.transpose(axes).reshape(*lead, n, h * d_k)


def multi_head_attention(x_q: Tensor, x_k: Tensor, x_v: Tensor, params: EncoderParams,
                         mask: int | None = None) -> Tensor:
    d = params.d_model
    for x in (x_q, x_k, x_v):
        if x.shape[-1] != d:
            raise ShapeError(f"input width {x.shape[-1]} does not match d_model {d}")
    h = params.num_heads
    q = _split_heads(dense(x_q, params.wq, params.bq), h)
    k = _split_heads(dense(x_k, params.wk, params.bk), h)
    v = _split_heads(dense(x_v, params.wv, params.bv), h)
    heads, _ = scaled_dot_product_attention(q, k, v, mask)
    return dense(_merge_heads(heads), params.wo, params.bo)


def encoder_block(x: Tensor, params: EncoderParams) -> Tensor:
    """Self-attention and feed-forward sublayers, each residual-added then normalized."""
    y = layer_norm(x + multi_head_attention(x, x, x, params), params.ln1_gain, params.ln1_bias)
    hidden = dense(y, params.ff1_w, params.ff1_b, params.activation)
    return layer_norm(y + dense(hidden, params.ff2_w, params.ff2_b), params.ln2_gain, params.ln2_bias)


@dataclass
class ReTModel:
    input_w: Tensor
    input_b: Tensor
    pe: PositionalEncodingTable
    encoders: list[EncoderParams]
    classifier_w: Tensor
    classifier_b: Tensor
    sequence_length: int
    num_classes: int = field(init=False)

    def __post_init__(self):
        self.num_classes = self.classifier_w.shape[1]
        if self.classifier_w.shape[0] != self.sequence_length * self.projection_dim:
            raise ValueError("classifier input must equal sequence_length * projection_dim")

    @property
    def input_dim(self) -> int:
        return self.input_w.shape[0]

    @property
    def projection_dim(self) -> int:
        return self.input_w.shape[1]

    @classmethod
    def create(cls, input_dim: int, num_classes: int, config: ModelConfig, seed: int = 0) -> "ReTModel":
        rng = np.random.default_rng(seed)
        d = config.projection_dim
        t = config.sequence_length
        return cls(
            input_w=init.glorot(rng, input_dim, d),
            input_b=init.zeros(d),
            pe=positional_encoding(t, d),
            encoders=[
                EncoderParams.create(d, config.num_heads, config.dense_dim, rng, config.activation)
                for _ in range(config.transformer_layers)
            ],
            classifier_w=init.small_head(rng, t * d, num_classes),
            classifier_b=init.zeros(num_classes),
            sequence_length=t,
        )

    def parameters(self) -> list[Tensor]:
        params = [self.input_w, self.input_b]
        for enc in self.encoders:
            params += enc.parameters()
        return params + [self.classifier_w, self.classifier_b]


def embed_and_encode(x: Tensor, model) -> Tensor:
    """Project each element and add the positional row for its index."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    seq = x.shape[-2]
    if seq > model.pe.max_len:
        raise ShapeError(f"sequence of {seq} exceeds positional table of {model.pe.max_len}")
    return dense(x, model.input_w, model.input_b) + model.pe.table[:seq]


def encode(x: Tensor, model) -> Tensor:
    h = embed_and_encode(x, model)
    for enc in model.encoders:
        h = encoder_block(h, enc)
    return h


def ret_forward(features, model: ReTModel) -> Tensor:
    """Class probabilities for one ``(seq, d_in)`` sequence or a ``(batch, seq, d_in)`` batch."""
    x = features if isinstance(features, Tensor) else Tensor(features)
    if x.ndim not in (2, 3):
        raise ShapeError(f"expected (seq, d_in) or (batch, seq, d_in), got {x.shape}")
    if x.shape[-2] != model.sequence_length:
        raise ShapeError(f"sequence length {x.shape[-2]} != model's {model.sequence_length}")
    if x.shape[-1] != model.input_dim:
        raise ShapeError(f"feature width {x.shape[-1]} != model input {model.input_dim}")
    h = encode(x, model)
    flat = h.reshape(-1) if x.ndim == 2 else h.reshape(x.shape[0], -1)
    return dense(flat, model.classifier_w, model.classifier_b, "softmax")


def ret_train(train, valid, config: ModelConfig, seed: int = 0, model: ReTModel | None = None):
    """Train a ReT on flattened frames; returns ``(model, history)``."""
    from .training import fit, flatten_frames

    if model is None:
        t, h, w, c = train.frame_shape
        model = ReTModel.create(h * w * c, len(train.class_names), config.with_updates(sequence_length=t), seed)
    history = fit(model, ret_forward, train, valid, config, seed, prepare=flatten_frames)
    return model, history
