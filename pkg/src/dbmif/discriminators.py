"""Full-band waveform discriminator and dilated subband discriminators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, PreconditionError
from .nn import Conv1d, Module
from .pqmf import FilterBank, analysis_op, default_bank

# (c_in, c_out, kernel, stride, groups)
WAVEFORM_LAYERS = (
    (1, 16, 15, 1, 1),
    (16, 64, 41, 4, 4),
    (64, 256, 41, 4, 4),
    (256, 1024, 41, 4, 4),
    (1024, 1024, 41, 4, 4),
    (1024, 1024, 5, 1, 1),
    (1024, 1, 3, 1, 1),
)

# (c_in, c_out, kernel, stride, groups); every layer uses the copy's dilation
SUBBAND_LAYERS = (
    (4, 36, 3, 1, 4),
    (36, 72, 7, 2, 4),
    (72, 144, 7, 2, 4),
    (144, 288, 7, 2, 4),
    (288, 576, 7, 2, 4),
    (576, 1152, 7, 2, 4),
    (1152, 1152, 5, 1, 4),
    (1152, 1, 3, 1, 1),
)

SUBBAND_DILATIONS = (1, 2, 3)
SLOPE = 0.1


def scale_layers(layers, width_scale: float, fixed_in: int):
    """Shrink hidden widths by ``width_scale``; first input and final output stay put.

    Scaled widths are rounded to a multiple of the largest group count so
    every grouped layer stays valid.
    """
    if width_scale == 1:
        return tuple(layers)
    unit = max(g for *_, g in layers)

    def scaled(c):
        return max(unit, unit * int(round(c * width_scale / unit)))

    out = []
    for i, (c_in, c_out, k, s, g) in enumerate(layers):
        new_in = fixed_in if i == 0 else scaled(c_in)
        new_out = 1 if i == len(layers) - 1 else scaled(c_out)
        if new_in % g or new_out % g:
            raise ConfigurationError(f"width scale {width_scale} breaks groups={g} at layer {i + 1}")
        out.append((new_in, new_out, k, s, g))
    return tuple(out)


@dataclass
class DiscriminatorOutput:
    score: Tensor  # (B, 1, T')
    features: list[Tensor]


class ConvStack(Module):
    """Weight-normalized same-padded conv stack; leaky ReLU on all but the last layer."""

    def __init__(self, layers, rng, dilation: int = 1):
        self.depth = len(layers)
        for i, (c_in, c_out, k, s, g) in enumerate(layers, start=1):
            setattr(self, f"layer{i}", Conv1d(c_in, c_out, k, rng, stride=s, dilation=dilation, groups=g, padding="same"))

    @property
    def layers(self) -> list[Conv1d]:
        return [getattr(self, f"layer{i}") for i in range(1, self.depth + 1)]

    def receptive_field(self) -> int:
        field, jump = 1, 1
        for conv in self.layers:
            field += conv.dilation * (conv.kernel_size - 1) * jump
            jump *= conv.stride
        return field

    def describe(self) -> list[dict]:
        return [conv.describe() for conv in self.layers]

    def run(self, x: Tensor) -> DiscriminatorOutput:
        features = []
        for conv in self.layers[:-1]:
            x = ad.leaky_relu(conv(x), SLOPE)
            features.append(x)
        return DiscriminatorOutput(self.layers[-1](x), features)


class WaveformDiscriminator(ConvStack):
    def __init__(self, rng, width_scale: float = 1.0):
        super().__init__(scale_layers(WAVEFORM_LAYERS, width_scale, 1), rng)

    def forward(self, x: Tensor) -> DiscriminatorOutput:
        if x.ndim != 3 or x.shape[1] != 1:
            raise ConfigurationError(f"waveform discriminator expects (B, 1, N), got {x.shape}")
        if x.shape[-1] < self.receptive_field():
            raise PreconditionError(
                f"input of {x.shape[-1]} samples shorter than receptive field {self.receptive_field()}"
            )
        return self.run(x)


class SubbandDiscriminator(ConvStack):
    def __init__(self, dilation: int, rng, bank: FilterBank | None = None, width_scale: float = 1.0):
        if dilation not in SUBBAND_DILATIONS:
            raise ConfigurationError(f"subband dilation must be one of {SUBBAND_DILATIONS}, got {dilation}")
        self.dilation = dilation
        self.bank = bank or default_bank()
        super().__init__(scale_layers(SUBBAND_LAYERS, width_scale, self.bank.bands), rng, dilation)

    def forward(self, x: Tensor) -> DiscriminatorOutput:
        if x.ndim != 3 or x.shape[1] != 1:
            raise ConfigurationError(f"subband discriminator expects (B, 1, N), got {x.shape}")
        return self.run(analysis_op(x, self.bank))


class DiscriminatorEnsemble(Module):
    """Index 0 is the waveform discriminator, 1..3 the subband copies with d = 1, 2, 3."""

    def __init__(self, seed: int = 0, bank: FilterBank | None = None, width_scale: float = 1.0):
        rng = np.random.default_rng(seed)
        self.k0 = WaveformDiscriminator(rng, width_scale)
        for i, d in enumerate(SUBBAND_DILATIONS, start=1):
            setattr(self, f"k{i}", SubbandDiscriminator(d, rng, bank, width_scale))

    @property
    def members(self) -> list[ConvStack]:
        return [self.k0, self.k1, self.k2, self.k3]

    def forward(self, x: Tensor) -> list[DiscriminatorOutput]:
        return [member(x) for member in self.members]
