"""Round-trip quality of the default 4-band PQMF on noise and tones.

    python scripts/pqmf_report.py --signals 100
"""

import argparse

import numpy as np

from dbmif.audio import Waveform
from dbmif.metrics import si_sdr
from dbmif.pqmf import analyze, default_bank, synthesize


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--signals", type=int, default=100)
    parser.add_argument("--tones", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    bank = default_bank()
    print(f"prototype: {bank.length} taps, cutoff {bank.prototype.cutoff:.6f}, delay {bank.delay}")
    rng = np.random.default_rng(args.seed)
    noise = [si_sdr(x, synthesize(analyze(x, bank), bank))
             for x in (Waveform(rng.standard_normal(16000)) for _ in range(args.signals))]
    print(f"white noise  min {min(noise):6.2f} dB  median {np.median(noise):6.2f} dB")
    t = np.arange(16000) / 16000
    for f in np.geomspace(50.0, 7600.0, args.tones):
        x = Waveform(np.sin(2 * np.pi * f * t))
        print(f"tone {f:8.1f} Hz  {si_sdr(x, synthesize(analyze(x, bank), bank)):6.2f} dB")


if __name__ == "__main__":
    main()
