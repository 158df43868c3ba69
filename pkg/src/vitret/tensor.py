"""Dense f64 tensors with a reverse-mode gradient tape.

Operations record themselves on the innermost active :class:`GradTape` when at
least one operand requires a gradient. Outside a tape nothing is recorded, so
inference runs at plain numpy speed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "TapeError",
    "Tensor",
    "GradTape",
    "backward",
    "matmul",
    "softmax",
    "layer_norm",
    "dense",
    "relu",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "cross_entropy",
    "cosine_similarity",
    "concat",
    "stack",
    "grad_check",
    "AdamState",
    "adam_step",
    "Adam",
]

CE_FLOOR = 1e-12


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


_TAPES: list["GradTape"] = []


class Tensor:
    """An n-d float64 array that can take part in a gradient tape.

    Tensors compare by identity so they can key gradient maps.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self._tape: GradTape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    __hash__ = object.__hash__

    # arithmetic
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)


@dataclass
class _Node:
    out: Tensor
    parents: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class GradTape:
    """Ordered record of primitive operations.

    Nodes are appended in execution order, which is already a topological
    order of the graph. A tape can be consumed by :meth:`backward` once.
    """

    nodes: list[_Node] = field(default_factory=list)
    consumed: bool = False

    def __enter__(self) -> "GradTape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def record(self, out: Tensor, parents: tuple[Tensor, ...], vjp) -> None:
        if self.consumed:
            raise TapeError("cannot record on a consumed tape")
        out.requires_grad = True
        out.node_id = len(self.nodes)
        out._tape = self
        self.nodes.append(_Node(out, parents, vjp))

    def backward(self, loss: Tensor) -> dict[Tensor, Tensor]:
        """Accumulate d(loss)/d(leaf) for every requires_grad leaf on the tape."""
        if loss.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise TapeError("loss was not recorded on this tape")
        if self.consumed:
            raise TapeError("tape already consumed by a previous backward pass")
        self.consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.node_id is None or parent._tape is not self:
                    leaves[id(parent)] = parent
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        self.nodes.clear()
        out: dict[Tensor, Tensor] = {}
        for key, leaf in leaves.items():
            g = grads.get(key)
            out[leaf] = Tensor(g if g is not None else np.zeros_like(leaf.data))
        return out


def backward(loss: Tensor) -> dict[Tensor, Tensor]:
    """Run the backward pass on the tape that recorded ``loss``."""
    if loss._tape is None:
        raise TapeError("loss is not recorded on any tape")
    return loss._tape.backward(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if _TAPES and any(p.requires_grad for p in parents):
        _TAPES[-1].record(out, parents, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from e
    return _result(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as e:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from e
    return _result(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def reciprocal(a: Tensor) -> Tensor:
    r = 1.0 / a.data
    return _result(r, (a,), lambda g: (-g * r * r,))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _result(e, (a,), lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _result(t, (a,), lambda g: (g * (1.0 - t * t),))


# structural


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts)


def getitem(a: Tensor, idx) -> Tensor:
    basic = _is_basic_index(idx)

    def vjp(g):
        out = np.zeros_like(a.data)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _result(a.data[idx], (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _result(data, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    data = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _result(data, tensors, vjp)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(data, (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


# linear algebra and layers


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    Leading (batch) axes must match, except that a 2-d operand is applied to
    every batch element of the other.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dims differ: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(data, (a, b), vjp)


def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} invalid for shape {x.shape}")
    return axis % x.ndim


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, epsilon: float = 1e-9) -> Tensor:
    """Normalize over the last axis, then scale by ``gain`` and shift by ``bias``."""
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(f"layer_norm gain {gain.shape} / bias {bias.shape} do not match last dim {n}")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + epsilon)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def vjp(g):
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(out, (x, gain, bias), vjp)


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None, activation: str = "none") -> Tensor:
    """Affine map ``x @ weight + bias`` followed by an activation."""
    if weight.ndim != 2 or weight.shape[0] != x.shape[-1]:
        raise ShapeError(f"dense weight {weight.shape} does not accept input {x.shape}")
    y = matmul(x, weight) if x.ndim >= 2 else reshape(matmul(reshape(x, (1, -1)), weight), (-1,))
    if bias is not None:
        y = y + bias
    if activation == "relu":
        return relu(y)
    if activation == "softmax":
        return softmax(y, axis=-1)
    if activation in ("none", None, "linear"):
        return y
    raise ValueError(f"unknown activation {activation!r}")


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean negative log-probability of the true classes."""
    p = probs.data if probs.ndim == 2 else probs.data.reshape(1, -1)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    batch, classes = p.shape
    if labels.shape != (batch,):
        raise ShapeError(f"{labels.shape[0]} labels for {batch} probability rows")
    if np.any(labels < 0) or np.any(labels >= classes):
        raise ValueError(f"label out of range for {classes} classes: {labels.tolist()}")
    if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-4):
        raise ValueError("probability rows must sum to 1")
    rows = np.arange(batch)
    picked = p[rows, labels]
    clipped = np.maximum(picked, CE_FLOOR)
    loss = np.array(-np.log(clipped).mean())

    def vjp(g):
        gp = np.zeros_like(p)
        gp[rows, labels] = np.where(picked >= CE_FLOOR, -g / (clipped * batch), 0.0)
        return (gp.reshape(probs.shape),)

    return _result(loss, (probs,), vjp)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"cosine_similarity needs equal-length vectors, got {a.shape} and {b.shape}")
    na, nb = np.linalg.norm(a.data), np.linalg.norm(b.data)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    dot = float(a.data @ b.data)
    cos = np.clip(dot / (na * nb), -1.0, 1.0)

    def vjp(g):
        ga = g * (b.data / (na * nb) - cos * a.data / (na * na))
        gb = g * (a.data / (na * nb) - cos * b.data / (nb * nb))
        return ga, gb

    return _result(np.array(cos), (a, b), vjp)


# verification


def grad_check(f: Callable[..., Tensor], x: Tensor | Sequence[Tensor], step: float = 1e-5) -> float:
    """Compare tape gradients of scalar ``f`` with central differences.

    ``x`` is one tensor or a sequence of tensors; ``f`` is called with them as
    positional arguments. Their data is perturbed in place and restored.
    Returns ``max |analytic - numeric| / max(1, |numeric|)``.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    saved = [t.requires_grad for t in xs]
    for t in xs:
        t.requires_grad = True
    try:
        with GradTape() as tape:
            out = f(*xs)
        grads = tape.backward(out)
    finally:
        for t, flag in zip(xs, saved):
            t.requires_grad = flag

    worst = 0.0
    for t in xs:
        analytic = grads[t].data if t in grads else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f(*xs).item()
            flat[i] = orig - step
            lo = f(*xs).item()
            flat[i] = orig
            numeric[i] = (hi - lo) / (2.0 * step)
        err = np.abs(analytic.reshape(-1) - numeric) / np.maximum(1.0, np.abs(numeric))
        if err.size:
            worst = max(worst, float(err.max()))
    return worst


# optimisation


@dataclass
class AdamState:
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(
    params: Sequence[Tensor],
    grads: dict[Tensor, Tensor],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place.

    Parameters missing from ``grads`` are treated as having zero gradient.
    """
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ShapeError(f"optimizer state holds {len(state.m)} buffers for {len(params)} params")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for i, p in enumerate(params):
        g = grads.get(p)
        if g is None:
            g = np.zeros_like(p.data)
        else:
            g = g.data if isinstance(g, Tensor) else np.asarray(g)
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ShapeError(f"gradient {g.shape} does not match parameter {p.shape}")
        m, v = state.m[i], state.v[i]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if lr != 0.0:
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


class Adam:
    def __init__(self, params: Sequence[Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def step(self, grads: dict[Tensor, Tensor]) -> None:
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
