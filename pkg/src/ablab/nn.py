"""Small parameter-dict building blocks shared by the perception and policy nets.

A model is a plain dict name -> Tensor plus free functions that apply it.
Initialization is He-uniform, seeded, so training is reproducible bit-for-bit.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T


def conv_init(rng: np.random.Generator, c_in: int, c_out: int, k: int, dtype=None) -> tuple[T.Tensor, T.Tensor]:
    bound = float(np.sqrt(2.0 / (c_in * k * k)))
    w = rng.uniform(-bound, bound, size=(c_out, c_in, k, k))
    b = np.zeros(c_out)
    return (T.Tensor(w, requires_grad=True, dtype=dtype),
            T.Tensor(b, requires_grad=True, dtype=dtype))


def linear_init(rng: np.random.Generator, n_in: int, n_out: int, dtype=None) -> tuple[T.Tensor, T.Tensor]:
    bound = float(np.sqrt(2.0 / n_in))
    w = rng.uniform(-bound, bound, size=(n_in, n_out))
    b = np.zeros(n_out)
    return (T.Tensor(w, requires_grad=True, dtype=dtype),
            T.Tensor(b, requires_grad=True, dtype=dtype))


def add_conv(params: dict, rng: np.random.Generator, name: str, c_in: int, c_out: int, k: int = 3, dtype=None):
    params[f"{name}.w"], params[f"{name}.b"] = conv_init(rng, c_in, c_out, k, dtype)


def add_linear(params: dict, rng: np.random.Generator, name: str, n_in: int, n_out: int, dtype=None):
    params[f"{name}.w"], params[f"{name}.b"] = linear_init(rng, n_in, n_out, dtype)


def conv(params: dict, name: str, x: T.Tensor, stride: int = 1, padding: int = 1) -> T.Tensor:
    return T.conv2d(x, params[f"{name}.w"], params[f"{name}.b"], stride=stride, padding=padding)


def dense(params: dict, name: str, x: T.Tensor) -> T.Tensor:
    return T.linear(x, params[f"{name}.w"], params[f"{name}.b"])


def param_count(params: dict) -> int:
    return sum(p.size for p in params.values())


def clone_params(params: dict) -> dict:
    return {k: T.Tensor(p.data.copy(), requires_grad=p.requires_grad, dtype=p.data.dtype)
            for k, p in params.items()}
