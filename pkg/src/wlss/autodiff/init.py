"""Parameter initialization: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights,
zero biases, unit batch-norm gamma."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def conv_kernel(rng: np.random.Generator, c_out: int, c_in: int, kh: int, kw: int) -> Tensor:
    return uniform_fan_in(rng, (c_out, c_in, kh, kw), c_in * kh * kw)


def linear_weight(rng: np.random.Generator, d_out: int, d_in: int) -> Tensor:
    return uniform_fan_in(rng, (d_out, d_in), d_in)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)
