"""Stacked-LSTM baseline classifier."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import init
from .config import ModelConfig
from .tensor import ShapeError, Tensor, dense, matmul, sigmoid, stack, tanh

FORGET_BIAS = 1.0


@dataclass
class LstmParams:
    """Gate weights fused column-wise in the order input, forget, candidate, output."""

    w_x: Tensor  # (d_in, 4h)
    w_h: Tensor  # (h, 4h)
    b: Tensor  # (4h,)

    def __post_init__(self):
        h = self.hidden_size
        if self.w_x.shape[1] != 4 * h or self.w_h.shape != (h, 4 * h) or self.b.shape != (4 * h,):
            raise ValueError("gate weights disagree on hidden size")

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_x.shape[0]

    @classmethod
    def create(cls, input_size: int, hidden_size: int, rng: np.random.Generator) -> "LstmParams":
        h = hidden_size
        # fill the fused matrices block by block rather than concatenating copies
        w_x = np.empty((input_size, 4 * h))
        w_h = np.empty((h, 4 * h))
        for w, fan_in in ((w_x, input_size), (w_h, h)):
            for k in range(4):
                w[:, k * h:(k + 1) * h] = init.glorot(rng, fan_in, h).data
        b = np.zeros(4 * h)
        b[h:2 * h] = FORGET_BIAS
        return cls(Tensor(w_x, True), Tensor(w_h, True), Tensor(b, True))

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(w_x, w_h, b)`` column blocks for one of ``i``, ``f``, ``g``, ``o``."""
        k = "ifgo".index(name)
        h = self.hidden_size
        cols = slice(k * h, (k + 1) * h)
        return self.w_x.data[:, cols], self.w_h.data[:, cols], self.b.data[cols]

    def parameters(self) -> list[Tensor]:
        return [self.w_x, self.w_h, self.b]


def _gates_to_state(z: Tensor, c: Tensor, h: int) -> tuple[Tensor, Tensor]:
    i = sigmoid(z[..., 0:h])
    f = sigmoid(z[..., h:2 * h])
    g = tanh(z[..., 2 * h:3 * h])
    o = sigmoid(z[..., 3 * h:4 * h])
    c_new = f * c + i * g
    return o * tanh(c_new), c_new


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, params: LstmParams) -> tuple[Tensor, Tensor]:
    """One step: returns ``(h', c')``. Works on single vectors or row batches."""
    n = params.hidden_size
    if x.shape[-1] != params.input_size or h.shape[-1] != n or c.shape[-1] != n:
        raise ShapeError(
            f"lstm_cell got x {x.shape}, h {h.shape}, c {c.shape} for input {params.input_size}, hidden {n}"
        )
    z = dense(x, params.w_x) + dense(h, params.w_h) + params.b
    return _gates_to_state(z, c, n)


def lstm_layer(inputs: Tensor, params: LstmParams) -> Tensor:
    """Unroll over ``(batch, T, d_in)`` from a zero state; returns all hidden states."""
    batch, steps, _ = inputs.shape
    n = params.hidden_size
    # input contributions for all steps in one product
    zx = matmul(inputs, params.w_x) + params.b
    h = Tensor(np.zeros((batch, n)))
    c = Tensor(np.zeros((batch, n)))
    outputs = []
    for t in range(steps):
        z = zx[:, t, :] + matmul(h, params.w_h)
        h, c = _gates_to_state(z, c, n)
        outputs.append(h)
    return stack(outputs, axis=1)


@dataclass
class LstmModel:
    layers: list[LstmParams]
    classifier_w: Tensor
    classifier_b: Tensor
    num_classes: int = field(init=False)

    def __post_init__(self):
        self.num_classes = self.classifier_w.shape[1]
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.input_size != prev.hidden_size:
                raise ValueError("layer input size must equal previous hidden size")

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_size

    @classmethod
    def create(cls, input_dim: int, num_classes: int, config: ModelConfig, seed: int = 0) -> "LstmModel":
        rng = np.random.default_rng(seed)
        units = config.lstm_units
        layers = [LstmParams.create(input_dim if i == 0 else units, units, rng) for i in range(config.lstm_layers)]
        return cls(layers, init.small_head(rng, units, num_classes), init.zeros(num_classes))

    def parameters(self) -> list[Tensor]:
        params = []
        for layer in self.layers:
            params += layer.parameters()
        return params + [self.classifier_w, self.classifier_b]


def lstm_forward(features, model: LstmModel) -> Tensor:
    """Probabilities from the final top-layer hidden state."""
    x = features if isinstance(features, Tensor) else Tensor(features)
    single = x.ndim == 2
    if single:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3:
        raise ShapeError(f"expected (T, d_in) or (batch, T, d_in), got {x.shape}")
    if x.shape[1] == 0:
        raise ValueError("cannot run an LSTM over an empty sequence")
    if x.shape[2] != model.input_dim:
        raise ShapeError(f"feature width {x.shape[2]} != model input {model.input_dim}")
    h = x
    for layer in model.layers:
        h = lstm_layer(h, layer)
    probs = dense(h[:, -1, :], model.classifier_w, model.classifier_b, "softmax")
    return probs.reshape(-1) if single else probs


def lstm_train(train, valid, config: ModelConfig, seed: int = 0, model: LstmModel | None = None):
    from .training import fit, flatten_frames

    if model is None:
        _, h, w, c = train.frame_shape
        model = LstmModel.create(h * w * c, len(train.class_names), config, seed)
    history = fit(model, lstm_forward, train, valid, config, seed, prepare=flatten_frames)
    return model, history
