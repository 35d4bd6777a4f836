"""SI-SDR and summaries of fusion/equilibrium telemetry."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import Waveform
from .errors import PreconditionError

CAP_DB = 120.0


def si_sdr(ref, est) -> float:
    """Scale-invariant SDR in dB, capped to +/-120 dB for degenerate residuals."""
    r = np.asarray(ref.samples if isinstance(ref, Waveform) else ref, dtype=np.float64)
    e = np.asarray(est.samples if isinstance(est, Waveform) else est, dtype=np.float64)
    if r.shape != e.shape:
        raise PreconditionError(f"reference and estimate lengths differ: {r.shape} vs {e.shape}")
    ref_power = float(r @ r)
    if ref_power == 0.0:
        raise PreconditionError("SI-SDR is undefined for an all-zero reference")
    if not np.any(e):
        return -CAP_DB
    target = (e @ r) / ref_power * r
    residual = e - target
    t_pow = float(target @ target)
    r_pow = float(residual @ residual)
    if r_pow < 1e-12 * t_pow:
        return CAP_DB
    if t_pow == 0.0:
        return -CAP_DB
    return float(np.clip(10.0 * np.log10(t_pow / r_pow), -CAP_DB, CAP_DB))


@dataclass
class IterationSummary:
    median: float
    mean: float
    histogram: dict[int, int]


def summarize_dbi(kstar) -> IterationSummary:
    """Median/mean stopping iteration and a per-k histogram."""
    if hasattr(kstar, "kstar"):
        kstar = kstar.kstar
    if isinstance(kstar, list):
        kstar = [np.ravel(k.kstar if hasattr(k, "kstar") else k) for k in kstar]
        values = np.concatenate(kstar) if kstar else np.zeros(0)
    else:
        values = np.ravel(kstar)
    if values.size == 0:
        raise PreconditionError("no stopping iterations to summarize")
    ks, counts = np.unique(values.astype(int), return_counts=True)
    return IterationSummary(float(np.median(values)), float(np.mean(values)), dict(zip(ks.tolist(), counts.tolist())))


def summarize_attention(weights: list[np.ndarray]) -> np.ndarray:
    """Mean AC weight per channel for each fusion round: (K, C)."""
    if not weights:
        raise PreconditionError("no attention weights to summarize")
    return np.stack([w.reshape(-1, w.shape[-1]).mean(axis=0) for w in weights])


@dataclass
class MetricReport:
    si_sdr_db: float
    per_utterance: dict[str, float] = field(default_factory=dict)
    dbi: IterationSummary | None = None
    diaf_mean_weight: np.ndarray | None = None
