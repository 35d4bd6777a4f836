"""Cosine-modulated pseudo-QMF analysis/synthesis.

Both directions work on one period of the signal (circular convolution), so an
N-sample input yields exactly N/M samples per band and the synthesis output,
advanced by the L-1 sample system delay, lines up with the input with no edge
loss. Analysis is a strided correlation with the time-reversed analysis
filters; synthesis is a strided transposed convolution with the synthesis
filters followed by a circular fold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .audio import Waveform
from .autodiff import Tensor
from .errors import ConfigurationError, PreconditionError

KAISER_BETA = 9.0
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class PrototypeFilter:
    taps: np.ndarray
    beta: float
    cutoff: float  # cycles/sample

    @property
    def length(self) -> int:
        return self.taps.shape[0]


@dataclass(frozen=True)
class FilterBank:
    prototype: PrototypeFilter
    bands: int
    analysis: np.ndarray  # (M, L)
    synthesis: np.ndarray  # (M, L)

    @property
    def length(self) -> int:
        return self.prototype.length

    @property
    def delay(self) -> int:
        return self.length - 1


@dataclass
class SubbandTensor:
    bands: np.ndarray  # (M, N/M)
    modality: str = "a"
    original_length: int | None = None

    def __post_init__(self):
        if isinstance(self.bands, (list, tuple)):
            lengths = {len(b) for b in self.bands}
            if len(lengths) > 1:
                raise PreconditionError(f"subband lengths differ: {sorted(lengths)}")
        self.bands = np.asarray(self.bands, dtype=np.float64)
        if self.bands.ndim != 2:
            raise PreconditionError(f"subbands must be (M, frames), got shape {self.bands.shape}")
        if self.original_length is None:
            self.original_length = self.bands.shape[0] * self.bands.shape[1]

    @property
    def num_bands(self) -> int:
        return self.bands.shape[0]


def kaiser_sinc(length: int, cutoff: float, beta: float = KAISER_BETA) -> np.ndarray:
    """Linear-phase windowed-sinc lowpass normalized to unit DC gain."""
    n = np.arange(length) - (length - 1) / 2.0
    taps = 2.0 * cutoff * np.sinc(2.0 * cutoff * n) * np.kaiser(length, beta)
    return taps / taps.sum()


def cosine_modulate(taps: np.ndarray, bands: int) -> tuple[np.ndarray, np.ndarray]:
    length = taps.shape[0]
    n = np.arange(length)
    m = np.arange(bands)[:, None]
    arg = (2 * m + 1) * np.pi / (2 * bands) * (n - (length - 1) / 2.0)
    phase = (-1.0) ** m * np.pi / 4.0
    h = 2.0 * taps[::-1] * np.cos(arg + phase)
    g = 2.0 * bands * taps * np.cos(arg - phase)
    return h, g


def modulate(proto: PrototypeFilter, bands: int) -> FilterBank:
    h, g = cosine_modulate(proto.taps, bands)
    return FilterBank(prototype=proto, bands=bands, analysis=h, synthesis=g)


def _round_trip_error(taps: np.ndarray, bands: int, probe: np.ndarray) -> float:
    h, g = cosine_modulate(taps, bands)
    est = _synthesize_np(_analyze_np(probe, h, bands), g, bands)
    return float(np.mean((est - probe) ** 2))


def golden_section(f, lo: float, hi: float, tol: float = 1e-7, max_iter: int = 200) -> float:
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if hi - lo < tol:
            break
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - _GOLDEN * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _GOLDEN * (hi - lo)
            fd = f(d)
    return (lo + hi) / 2.0


def design_prototype(length: int = 64, bands: int = 4, probe_seed: int = 0) -> PrototypeFilter:
    """Kaiser-windowed sinc prototype whose cutoff minimizes round-trip error.

    The cutoff is searched over [0.5, 1.5] x 1/(4M) cycles/sample on a fixed
    white-noise probe, so the result is deterministic.
    """
    if length % 2 or length < 4 * bands:
        raise ConfigurationError(f"prototype length must be even and >= 4M={4 * bands}, got {length}")
    probe = np.random.default_rng(probe_seed).standard_normal(64 * length)
    nominal = 1.0 / (4 * bands)
    cutoff = golden_section(
        lambda fc: _round_trip_error(kaiser_sinc(length, fc), bands, probe),
        0.5 * nominal,
        1.5 * nominal,
    )
    return PrototypeFilter(taps=kaiser_sinc(length, cutoff), beta=KAISER_BETA, cutoff=cutoff)


_DEFAULT_BANKS: dict[tuple[int, int], FilterBank] = {}


def default_bank(length: int = 64, bands: int = 4) -> FilterBank:
    key = (length, bands)
    if key not in _DEFAULT_BANKS:
        _DEFAULT_BANKS[key] = modulate(design_prototype(length, bands), bands)
    return _DEFAULT_BANKS[key]


# -- numpy reference path (float64) ------------------------------------------

def _analyze_np(x: np.ndarray, h: np.ndarray, bands: int) -> np.ndarray:
    n = x.shape[-1]
    spectrum = np.fft.rfft(x)
    out = []
    for hm in h:
        full = np.fft.irfft(spectrum * np.fft.rfft(hm, n), n)
        out.append(full[::bands])
    return np.stack(out)


def _synthesize_np(s: np.ndarray, g: np.ndarray, bands: int) -> np.ndarray:
    frames = s.shape[-1]
    n = frames * bands
    y = np.zeros(n)
    for sm, gm in zip(s, g):
        up = np.zeros(n)
        up[::bands] = sm
        y += np.fft.irfft(np.fft.rfft(up) * np.fft.rfft(gm, n), n)
    return np.roll(y, -(g.shape[-1] - 1))


# -- differentiable path ---------------------------------------------------------

def analysis_op(x: Tensor, bank: FilterBank) -> Tensor:
    """(B, 1, N) waveform -> (B, M, N/M) subbands; N must be divisible by M."""
    n, m, length = x.shape[-1], bank.bands, bank.length
    if n % m:
        raise PreconditionError(f"signal length {n} is not a multiple of {m} bands")
    if n < length:
        raise PreconditionError(f"signal length {n} shorter than filter length {length}")
    wrapped = ad.concat([x[..., n - length + 1 :], x], axis=-1)
    kernel = Tensor(bank.analysis[:, None, ::-1].copy())
    return ad.conv1d(wrapped, kernel, stride=m)


def synthesis_op(s: Tensor, bank: FilterBank) -> Tensor:
    """(B, M, F) subbands -> (B, 1, F*M) waveform, delay-compensated."""
    m, length = bank.bands, bank.length
    if s.shape[-2] != m:
        raise ConfigurationError(f"expected {m} bands, got {s.shape[-2]}")
    n = s.shape[-1] * m
    if n < length:
        raise PreconditionError(f"{n} output samples shorter than filter length {length}")
    full = ad.conv_transpose1d(s, Tensor(bank.synthesis[:, None, :].copy()), stride=m)
    overlap = length - m  # samples of ``full`` beyond one period
    folded = ad.concat([full[..., :overlap] + full[..., n:], full[..., overlap:n]], axis=-1)
    shift = length - 1
    return ad.concat([folded[..., shift:], folded[..., :shift]], axis=-1)


def pad_to_multiple(x: np.ndarray, multiple: int) -> np.ndarray:
    extra = (-x.shape[-1]) % multiple
    if not extra:
        return x
    return np.concatenate([x, np.zeros(x.shape[:-1] + (extra,), dtype=x.dtype)], axis=-1)


def analyze(x: Waveform, bank: FilterBank | None = None, modality: str = "a") -> SubbandTensor:
    bank = bank or default_bank()
    if len(x) == 0:
        raise PreconditionError("cannot analyze an empty signal")
    samples = pad_to_multiple(x.samples, bank.bands)
    if samples.shape[0] < bank.length:
        samples = pad_to_multiple(np.concatenate([samples, np.zeros(bank.length - samples.shape[0])]), bank.bands)
    return SubbandTensor(_analyze_np(samples, bank.analysis, bank.bands), modality, len(x))


def synthesize(s: SubbandTensor, bank: FilterBank | None = None) -> Waveform:
    bank = bank or default_bank()
    if s.num_bands != bank.bands:
        raise PreconditionError(f"expected {bank.bands} bands, got {s.num_bands}")
    y = _synthesize_np(s.bands, bank.synthesis, bank.bands)
    return Waveform(y[: s.original_length])


def write_taps(path, proto: PrototypeFilter) -> None:
    with open(path, "w") as fh:
        for tap in proto.taps:
            fh.write(f"{tap:.17g}\n")


def read_taps(path) -> np.ndarray:
    with open(path) as fh:
        return np.array([float(line) for line in fh if line.strip()])
