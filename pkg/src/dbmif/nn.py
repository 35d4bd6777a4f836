"""Parameter containers and weight-normalized layers built on the autodiff engine."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError


class Module:
    """Minimal parameter registry; attributes that are Tensors with
    ``requires_grad`` or sub-Modules (also inside lists) are discovered in
    attribute definition order."""

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            name = f"{prefix}.{attr}" if prefix else attr
            yield from _walk(name, value)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _walk(name: str, value) -> Iterator[tuple[str, Tensor]]:
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name)
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{name}.{i}", item)


def parameter(values: np.ndarray, name: str | None = None) -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


@dataclass
class WeightNormParam:
    direction: Tensor
    magnitude: Tensor
    axis: int = 0

    def effective(self) -> Tensor:
        return ad.weight_norm(self.direction, self.magnitude, self.axis)


def _init_direction(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)


def _channel_norms(v: np.ndarray, axis: int) -> np.ndarray:
    axes = tuple(i for i in range(v.ndim) if i != axis)
    return np.sqrt((v * v).sum(axis=axes))


class Conv1d(Module):
    """Weight-normalized 1-D convolution with explicit padding."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        dilation: int = 1,
        groups: int = 1,
        padding: int | str = 0,
        bias: bool = True,
    ):
        if in_channels % groups or out_channels % groups:
            raise ConfigurationError(
                f"channels {in_channels}->{out_channels} not divisible by groups {groups}"
            )
        if padding == "same":
            if kernel_size % 2 == 0:
                raise ConfigurationError(f"same padding needs an odd kernel, got {kernel_size}")
            padding = dilation * (kernel_size - 1) // 2
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.dilation = dilation
        self.groups = groups
        self.padding = int(padding)
        fan_in = in_channels // groups * kernel_size
        v = _init_direction(rng, (out_channels, in_channels // groups, kernel_size), fan_in)
        self.direction = parameter(v)
        self.magnitude = parameter(_channel_norms(v, 0))
        self.bias = parameter(np.zeros(out_channels)) if bias else None

    @property
    def weight(self) -> WeightNormParam:
        return WeightNormParam(self.direction, self.magnitude, 0)

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv1d(
            x,
            self.weight.effective(),
            self.bias,
            stride=self.stride,
            dilation=self.dilation,
            groups=self.groups,
            padding=self.padding,
        )

    def describe(self) -> dict:
        return {
            "in": self.in_channels,
            "out": self.out_channels,
            "kernel": self.kernel_size,
            "stride": self.stride,
            "groups": self.groups,
            "dilation": self.dilation,
            "padding": self.padding,
        }


class ConvTranspose1d(Module):
    """Weight-normalized transposed convolution; magnitudes are per output channel."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        bias: bool = True,
    ):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        v = _init_direction(rng, (in_channels, out_channels, kernel_size), in_channels * kernel_size // stride)
        self.direction = parameter(v)
        self.magnitude = parameter(_channel_norms(v, 1))
        self.bias = parameter(np.zeros(out_channels)) if bias else None

    @property
    def weight(self) -> WeightNormParam:
        return WeightNormParam(self.direction, self.magnitude, 1)

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv_transpose1d(x, self.weight.effective(), self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        self.weight = parameter(rng.normal(0.0, 1.0 / np.sqrt(in_features), size=(out_features, in_features)))
        self.bias = parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.weight, self.bias)
