"""Weight initializers (He-uniform for conv/linear, Glorot-uniform for GNNs)."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, default_dtype


def he_uniform(shape: tuple[int, ...], fan_in: int,
               rng: np.random.Generator) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    data = rng.uniform(-bound, bound, size=shape).astype(default_dtype())
    return Tensor(data, requires_grad=True)


def glorot_uniform(shape: tuple[int, ...], fan_in: int, fan_out: int,
                   rng: np.random.Generator) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    data = rng.uniform(-bound, bound, size=shape).astype(default_dtype())
    return Tensor(data, requires_grad=True)


def zeros(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape, dtype=default_dtype()), requires_grad=True)


def ones(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.ones(shape, dtype=default_dtype()), requires_grad=True)
