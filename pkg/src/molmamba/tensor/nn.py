"""Parameter containers and initialization schemes."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from molmamba.errors import ShapeError
from molmamba.tensor import ops
from molmamba.tensor.core import Parameter, Tensor


def seeded_rng(seed: int) -> np.random.Generator:
    """Independent PCG64 stream; equal seeds give equal draws."""
    return np.random.default_rng(seed)


def fan_in_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    """Uniform draws with variance ``1 / fan_in``."""
    bound = np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Base class that discovers parameters and submodules from attributes.

    Parameter names are dotted attribute paths; list attributes holding
    modules contribute their index as a path component.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            path = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, bias: bool = True):
        self.w = Parameter(fan_in_uniform(rng, n_in, (n_in, n_out)))
        self.b = Parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.w.shape[0]:
            raise ShapeError(f"linear: input width {x.shape[-1]} != {self.w.shape[0]}")
        if x.ndim == 2:
            return ops.linear(x, self.w, self.b)
        y = x @ self.w
        return y + self.b if self.b is not None else y


class LayerNorm(Module):
    def __init__(self, width: int):
        self.gain = Parameter(np.ones(width))
        self.bias = Parameter(np.zeros(width))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layernorm(x, axis=-1) * self.gain + self.bias


class Embedding(Module):
    def __init__(self, rng: np.random.Generator, rows: int, width: int):
        self.table = Parameter(fan_in_uniform(rng, 1, (rows, width)))

    @property
    def rows(self) -> int:
        return self.table.shape[0]

    def __call__(self, index) -> Tensor:
        return ops.gather(self.table, index)


class MLP(Module):
    """linear -> silu -> linear."""

    def __init__(self, rng: np.random.Generator, n_in: int, n_hidden: int, n_out: int, bias: bool = True):
        self.fc1 = Linear(rng, n_in, n_hidden, bias=bias)
        self.fc2 = Linear(rng, n_hidden, n_out, bias=bias)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ops.silu(self.fc1(x)))
