"""Command-line entry point: ``dbmif <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .audio import read_wav, write_wav
from .errors import CheckpointError, ConfigurationError, NumericalError, PreconditionError

log = logging.getLogger("dbmif")


def cmd_train(args) -> int:
    from .train import TrainState, load_config, train

    cfg = load_config(args.config)
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = TrainState(cfg)
    state, reports = train(cfg, log_path=out / "train.jsonl", state=state)
    state.save(out / "model.ckpt")
    last = reports[-1].losses
    print(f"{len(reports)} steps  L_D {last.disc:.4f}  L_G {last.gen_total:.4f}  -> {out / 'model.ckpt'}")
    return 0


def cmd_enhance(args) -> int:
    from .train import enhance, load_generator

    x_a, x_b = read_wav(args.ac), read_wav(args.bc)
    gen = load_generator(args.ckpt)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_wav(args.out, enhance(x_a, x_b, gen))
    return 0


def _estimate_path(est_dir: Path, ident: str) -> Path | None:
    for name in (f"{ident}.wav", f"{ident}_enhanced.wav"):
        if (est_dir / name).exists():
            return est_dir / name
    return None


def _mean_or_nan(col: np.ndarray) -> float:
    finite = col[~np.isnan(col)]
    return float(finite.mean()) if finite.size else float("nan")


def cmd_eval(args) -> int:
    from .metrics import si_sdr

    ref_dir, est_dir = Path(args.ref), Path(args.est)
    rows = []
    for clean_path in sorted(ref_dir.glob("*_clean.wav")):
        ident = clean_path.name[: -len("_clean.wav")]
        est_path = _estimate_path(est_dir, ident)
        if est_path is None:
            log.warning("no estimate for %s", ident)
            continue
        ref = read_wav(clean_path)
        est = read_wav(est_path)
        noisy_path = ref_dir / f"{ident}_ac.wav"
        noisy = si_sdr(ref, read_wav(noisy_path)) if noisy_path.exists() else float("nan")
        enhanced = si_sdr(ref, est)
        rows.append((ident, noisy, enhanced, enhanced - noisy))
    if not rows:
        raise PreconditionError(f"no (reference, estimate) pairs found under {ref_dir} and {est_dir}")
    print(f"{'id':<16} {'noisy':>9} {'enhanced':>9} {'delta':>8}")
    for ident, noisy, enhanced, delta in rows:
        print(f"{ident:<16} {noisy:9.2f} {enhanced:9.2f} {delta:+8.2f}")
    arr = np.array([r[1:] for r in rows])
    noisy_mean, _, delta_mean = (_mean_or_nan(col) for col in arr.T)
    print(f"{'mean':<16} {noisy_mean:9.2f} {arr[:, 1].mean():9.2f} {delta_mean:+8.2f}  (n={len(rows)})")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "si_sdr_noisy", "si_sdr_enhanced", "delta"])
            writer.writerows(rows)
    return 0


def cmd_design_pqmf(args) -> int:
    from .pqmf import design_prototype, write_taps

    proto = design_prototype(args.length, args.bands)
    write_taps(args.taps, proto)
    print(f"{proto.taps.size} taps, cutoff {proto.cutoff:.6f}, beta {proto.beta} -> {args.taps}")
    return 0


def cmd_forge(args) -> int:
    from .data import forge

    corpus = forge(args.out, args.n, args.seed)
    print(f"wrote {len(corpus)} examples to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import MODULES, PRIMITIVES, run_case

    names = args.only or list(PRIMITIVES) + list(MODULES)
    failed = 0
    for name in names:
        results = [run_case(name, seed) for seed in range(args.seeds)]
        worst = max(r.rel_error for r in results)
        ok = all(r.passed for r in results)
        failed += not ok
        skipped = sum(r.skipped for r in results)
        print(f"{'PASS' if ok else 'FAIL'}  {name:<24} max rel err {worst:.2e}  (kink-skipped {skipped})")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dbmif", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a key = value config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default: out_dir from the config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance one AC/BC pair with a trained checkpoint")
    p.add_argument("--ac", required=True)
    p.add_argument("--bc", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="SI-SDR of estimates against {id}_clean.wav references")
    p.add_argument("--ref", required=True)
    p.add_argument("--est", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("design-pqmf", help="design the prototype filter and write its taps")
    p.add_argument("--taps", required=True)
    p.add_argument("--length", type=int, default=64)
    p.add_argument("--bands", type=int, default=4)
    p.set_defaults(func=cmd_design_pqmf)

    p = sub.add_parser("forge", help="write a synthetic paired corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forge)

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive and module")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--only", nargs="*")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, PreconditionError, CheckpointError, NumericalError, FileNotFoundError) as exc:
        print(f"dbmif {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
