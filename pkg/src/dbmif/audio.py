"""Waveform container and 16-bit PCM WAV I/O."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import PreconditionError

SAMPLE_RATE = 16000


@dataclass
class Waveform:
    samples: np.ndarray
    rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise PreconditionError(f"waveform must be mono 1-D, got shape {self.samples.shape}")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples**2))) if len(self) else 0.0


def write_wav(path: str | Path, wav: Waveform) -> None:
    pcm = np.clip(np.round(wav.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(wav.rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path: str | Path) -> Waveform:
    try:
        fh = wave.open(str(path), "rb")
    except wave.Error as exc:
        raise PreconditionError(f"{path}: not a PCM WAV file ({exc})") from exc
    with fh:
        if fh.getnchannels() != 1:
            raise PreconditionError(f"{path}: expected mono, got {fh.getnchannels()} channels")
        if fh.getsampwidth() != 2:
            raise PreconditionError(f"{path}: expected 16-bit PCM, got {8 * fh.getsampwidth()}-bit")
        if fh.getframerate() != SAMPLE_RATE:
            raise PreconditionError(f"{path}: expected {SAMPLE_RATE} Hz, got {fh.getframerate()} Hz")
        raw = fh.readframes(fh.getnframes())
    return Waveform(np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0)
