"""Parameter containers: a tiny Module base plus conv / PReLU layers."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor

PRELU_INIT = 0.25


class Module:
    """Holds parameters and child modules as attributes, in insertion order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            yield from _walk(value, prefix + key)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


def _walk(value, name: str) -> Iterator[tuple[str, Tensor]]:
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, dict):
        for k, item in value.items():
            yield from _walk(item, f"{name}.{k}")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


def _param(data: np.ndarray, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Conv2d(Module):
    """Same-size convolution by default (padding = (k-1)/2)."""

    def __init__(
        self,
        c_in: int,
        c_out: int,
        k: int = 3,
        rng: np.random.Generator | None = None,
        stride: int = 1,
        padding: int | None = None,
        init: str = "kaiming",
    ):
        if c_in <= 0 or c_out <= 0:
            raise ag.DimensionError(f"conv channels must be positive, got {c_in}->{c_out}")
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.stride = stride
        self.padding = (k - 1) // 2 if padding is None else padding
        shape = (c_out, c_in, k, k)
        if init == "zeros":
            w = np.zeros(shape, dtype=ag.DTYPE)
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            w = rng.standard_normal(shape).astype(ag.DTYPE) * ag.kaiming_std(c_in * k * k)
        self.weight = _param(w)
        self.bias = _param(np.zeros(c_out, dtype=ag.DTYPE))

    def __call__(self, x: Tensor) -> Tensor:
        return ag.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class PReLU(Module):
    def __init__(self, channels: int, init: float = PRELU_INIT):
        self.slope = _param(np.full(channels, init, dtype=ag.DTYPE))

    def __call__(self, x: Tensor) -> Tensor:
        return ag.prelu(x, self.slope)


class ConvPReLU(Module):
    """One learned mapping: 3x3 conv followed by PReLU."""

    def __init__(self, c_in: int, c_out: int, rng=None, init: str = "kaiming"):
        self.conv = Conv2d(c_in, c_out, 3, rng, init=init)
        self.act = PReLU(c_out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.act(self.conv(x))


class ResidualBlock(Module):
    """conv3x3 -> PReLU -> conv3x3, plus identity skip; no activation after the sum."""

    def __init__(self, channels: int, rng=None, init: str = "kaiming"):
        self.conv1 = Conv2d(channels, channels, 3, rng, init=init)
        self.act = PReLU(channels)
        self.conv2 = Conv2d(channels, channels, 3, rng, init=init)

    def __call__(self, x: Tensor) -> Tensor:
        return ag.add(self.conv2(self.act(self.conv1(x))), x)


def zero_parameters(module: Module) -> None:
    """Zero every parameter in place, PReLU slopes included."""
    for p in module.parameters():
        p.data[...] = 0.0
