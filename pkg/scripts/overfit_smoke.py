"""Overfit the desk-scale model on four synthetic pairs and report progress.

    python scripts/overfit_smoke.py --steps 200 --seed 0
"""

import argparse
import logging
import time

import numpy as np

from dbmif.data import make_synthetic_corpus
from dbmif.metrics import si_sdr
from dbmif.train import TrainConfig, enhance, train


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--steps", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--lr", type=float, default=None, help="generator LR (desk default 2e-3)")
    parser.add_argument("--d-lr", type=float, default=None, help="discriminator LR (desk default 1e-4)")
    parser.add_argument("--log", default=None)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    overrides = {k: v for k, v in (("lr", args.lr), ("d_lr", args.d_lr)) if v is not None}
    cfg = TrainConfig.desk(max_steps=args.steps, seed=args.seed, **overrides)
    corpus = make_synthetic_corpus(cfg.corpus_size, cfg.seed)
    start = time.perf_counter()
    state, reports = train(cfg, corpus, log_path=args.log)
    fm = np.array([r.losses.gen_fm for r in reports])
    print(f"trained {len(reports)} steps in {time.perf_counter() - start:.0f} s")
    print(f"fm first-10 mean {fm[:10].mean():.5f}  last-10 mean {fm[-10:].mean():.5f}  "
          f"drop {100 * (1 - fm[-10:].mean() / fm[:10].mean()):.1f}%")
    for ex in corpus:
        noisy = si_sdr(ex.clean, ex.noisy)
        enhanced = si_sdr(ex.clean, enhance(ex.noisy, ex.bone, state.generator, state.bank))
        bone = si_sdr(ex.clean, ex.bone)
        print(f"{ex.id}  snr {ex.snr_db:6.2f}  noisy {noisy:6.2f}  bone {bone:6.2f}  "
              f"enhanced {enhanced:6.2f}  delta {enhanced - noisy:+.2f}")


if __name__ == "__main__":
    main()
