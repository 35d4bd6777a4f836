"""Synthetic paired AC/BC corpus and the online slicing/mixing pipeline."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import sosfilt

from .audio import SAMPLE_RATE, Waveform, write_wav
from .errors import PreconditionError

# 6th-order Butterworth lowpass, 1 kHz corner at 16 kHz, as three biquads
# (b0, b1, b2, a0, a1, a2); equal to scipy.signal.butter(6, 1000, fs=16000, output="sos").
BC_LOWPASS_SOS = np.array(
    [
        [2.8825891944002810e-05, 5.7651783888005621e-05, 2.8825891944002810e-05, 1.0, -1.3490799948883918, 0.46023366403769800],
        [1.0, 2.0, 1.0, 1.0, -1.4542435862515850, 0.57406191508395488],
        [1.0, 2.0, 1.0, 1.0, -1.6812394272942186, 0.81976044292731365],
    ]
)
BC_DRIVE = 1.5
NOISE_KINDS = ("white", "pink", "babble")


@dataclass
class MixSpec:
    snr_db: float = 0.0
    snr_range: tuple[float, float] = (-15.0, 5.0)
    fade_ms: float = 50.0
    slice_seconds: float = 1.0
    rate: int = SAMPLE_RATE

    @property
    def slice_samples(self) -> int:
        return int(round(self.slice_seconds * self.rate))

    @property
    def fade_samples(self) -> int:
        return int(round(self.fade_ms * self.rate / 1000.0))

    def draw_snr(self, rng: np.random.Generator) -> float:
        lo, hi = self.snr_range
        return float(rng.uniform(lo, hi))


@dataclass
class PairedExample:
    clean: Waveform
    noisy: Waveform
    bone: Waveform
    snr_db: float
    seed: int
    index: int = 0
    noise: np.ndarray | None = None  # scaled noise as injected, before the RMS rescale

    @property
    def id(self) -> str:
        return f"s{self.seed}_{self.index:05d}"


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def simulate_bc(y: Waveform) -> Waveform:
    """Lowpass at 1 kHz, then a mild tanh transduction curve.

    The curve is level-preserving (its output is rescaled to the RMS of the
    filtered signal), so the lowpass attenuation carries through unchanged.
    """
    if y.rate != SAMPLE_RATE:
        raise PreconditionError(f"bone-conduction simulation runs at {SAMPLE_RATE} Hz, got {y.rate}")
    filtered = sosfilt(BC_LOWPASS_SOS, y.samples)
    shaped = np.tanh(BC_DRIVE * filtered) / np.tanh(BC_DRIVE)
    level = _rms(shaped)
    if level == 0.0:
        return Waveform(np.zeros_like(y.samples), y.rate)
    return Waveform(shaped * (_rms(filtered) / level), y.rate)


def scale_noise(y: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    p_y = np.mean(y**2)
    p_n = np.mean(noise**2)
    if p_y == 0.0 or p_n == 0.0:
        raise PreconditionError("SNR is undefined for a silent clean or noise signal")
    return noise * np.sqrt(p_y / (p_n * 10.0 ** (snr_db / 10.0)))


def mix_components(
    y: Waveform, noise: Waveform, snr_db: float, rng: np.random.Generator | None = None
) -> tuple[Waveform, np.ndarray]:
    """Return (RMS-rescaled mixture, scaled noise that was added)."""
    if len(noise) < len(y):
        raise PreconditionError(f"noise has {len(noise)} samples, clean has {len(y)}")
    start = 0 if rng is None or len(noise) == len(y) else int(rng.integers(0, len(noise) - len(y) + 1))
    n = scale_noise(y.samples, noise.samples[start : start + len(y)], snr_db)
    mixture = y.samples + n
    return Waveform(mixture * (_rms(y.samples) / _rms(mixture)), y.rate), n


def mix_at_snr(y: Waveform, noise: Waveform, snr_db: float, rng: np.random.Generator | None = None) -> Waveform:
    return mix_components(y, noise, snr_db, rng)[0]


def fade_ramp(length: int) -> np.ndarray:
    return np.arange(length) / length


def slice_and_fade(x: Waveform, spec: MixSpec | None = None, offset: int = 0) -> Waveform:
    spec = spec or MixSpec()
    n = spec.slice_samples
    if offset < 0 or offset + n > len(x):
        raise PreconditionError(f"slice [{offset}, {offset + n}) outside signal of {len(x)} samples")
    out = x.samples[offset : offset + n].copy()
    ramp = fade_ramp(spec.fade_samples)
    out[: ramp.size] *= ramp
    out[-ramp.size :] *= ramp[::-1]
    return Waveform(out, x.rate)


# -- synthetic sources ------------------------------------------------------------

def _lowpass_1pole(x: np.ndarray, coeff: float) -> np.ndarray:
    return sosfilt(np.array([[1.0 - coeff, 0.0, 0.0, 1.0, -coeff, 0.0]]), x)


def synth_clean(rng: np.random.Generator, samples: int, rate: int = SAMPLE_RATE) -> np.ndarray:
    """Harmonic 'voiced' tones under a syllabic envelope plus tilted noise bursts."""
    t = np.arange(samples) / rate
    f0 = rng.uniform(100.0, 300.0)
    vibrato = 1.0 + 0.02 * np.sin(2 * np.pi * rng.uniform(3.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * f0 * np.cumsum(vibrato) / rate
    voiced = np.zeros(samples)
    for h in range(1, int(rng.integers(2, 5)) + 1):
        voiced += rng.uniform(0.5, 1.0) / h * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    envelope = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(2.0, 5.0) * t + rng.uniform(0, 2 * np.pi))
    y = voiced * envelope
    for _ in range(int(rng.integers(1, 3))):
        width = int(rng.uniform(0.05, 0.15) * rate)
        start = int(rng.integers(0, samples - width))
        burst = _lowpass_1pole(rng.standard_normal(width), 0.7) * np.hanning(width)
        y[start : start + width] += 0.3 * burst
    return 0.4 * y / np.max(np.abs(y))


def synth_noise(kind: str, rng: np.random.Generator, samples: int, rate: int = SAMPLE_RATE) -> np.ndarray:
    white = rng.standard_normal(samples)
    if kind == "white":
        return white
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(samples, 1.0 / rate)
    spectrum[1:] /= np.sqrt(freqs[1:])
    spectrum[0] = 0.0
    pink = np.fft.irfft(spectrum, samples)
    if kind == "pink":
        return pink
    if kind == "babble":
        t = np.arange(samples) / rate
        mod = np.ones(samples)
        for _ in range(3):
            mod += 0.5 * np.sin(2 * np.pi * rng.uniform(2.0, 8.0) * t + rng.uniform(0, 2 * np.pi))
        return pink * np.abs(mod)
    raise PreconditionError(f"unknown noise kind {kind!r}")


def make_example(seed: int, index: int, spec: MixSpec | None = None) -> PairedExample:
    spec = spec or MixSpec()
    rng = np.random.default_rng([seed, index])
    n = spec.slice_samples
    source_len = n + n // 4
    offset = int(rng.integers(0, source_len - n + 1))
    clean = slice_and_fade(Waveform(synth_clean(rng, source_len, spec.rate), spec.rate), spec, offset)
    kind = NOISE_KINDS[int(rng.integers(len(NOISE_KINDS)))]
    noise = slice_and_fade(Waveform(synth_noise(kind, rng, source_len, spec.rate), spec.rate), spec, offset)
    snr = spec.draw_snr(rng)
    noisy, scaled = mix_components(clean, noise, snr)
    return PairedExample(clean, noisy, simulate_bc(clean), snr, seed, index, scaled)


def make_synthetic_corpus(n: int, seed: int = 0, spec: MixSpec | None = None) -> list[PairedExample]:
    if n < 1:
        raise PreconditionError(f"corpus size must be >= 1, got {n}")
    return [make_example(seed, i, spec) for i in range(n)]


def forge(out_dir: str | Path, n: int, seed: int) -> list[PairedExample]:
    """Write {id}_clean/_ac/_bc.wav and a manifest of ``id snr_db seed`` lines."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = make_synthetic_corpus(n, seed)
    with open(out / "manifest.txt", "w") as fh:
        for ex in corpus:
            write_wav(out / f"{ex.id}_clean.wav", ex.clean)
            write_wav(out / f"{ex.id}_ac.wav", ex.noisy)
            write_wav(out / f"{ex.id}_bc.wav", ex.bone)
            fh.write(f"{ex.id} {ex.snr_db:.6f} {ex.seed}\n")
    return corpus


def read_manifest(path: str | Path) -> list[tuple[str, float, int]]:
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                ident, snr, seed = line.split()
                rows.append((ident, float(snr), int(seed)))
    return rows
