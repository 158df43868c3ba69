import numpy as np

from .tensor import Tensor


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)


def small_head(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    # classifier heads start near zero so untrained models predict near-uniform
    limit = 1.0 / fan_in
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)


def zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(*shape: int) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


def full(value: float, *shape: int) -> Tensor:
    return Tensor(np.full(shape, value, dtype=np.float64), requires_grad=True)
