"""Alternating hinge-GAN training, enhancement and model persistence."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .audio import Waveform
from .autodiff import Tensor
from .data import PairedExample, make_synthetic_corpus
from .discriminators import DiscriminatorEnsemble
from .errors import CheckpointError, ConfigurationError, NumericalError, PreconditionError
from .generator import Generator, GeneratorConfig
from .losses import LossReport, disc_loss, disc_terms, feature_matching_loss, gen_adv_loss, gen_total_loss
from .optim import AdamState, CosineSchedule, adam_step
from .pqmf import FilterBank, analysis_op, default_bank, synthesis_op

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 100
    max_steps: int = 0  # 0 = epochs * batches per epoch
    lr: float = 3e-4
    d_lr: float = 0.0  # 0 = same as lr
    lr_floor: float = 0.0
    beta1: float = 0.5
    beta2: float = 0.9
    lam: float = 1000.0
    seed: int = 0
    corpus_size: int = 64
    width_scale: float = 1.0
    disc_width_scale: float = 1.0
    diaf_iterations: int = 3
    dbi_max_iter: int = 50
    dbi_tol: float = 1e-4
    out_dir: str = "runs/default"

    def __post_init__(self):
        for name in ("batch_size", "epochs", "corpus_size", "diaf_iterations", "dbi_max_iter"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("lr", "beta1", "beta2", "width_scale", "disc_width_scale"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lam < 0 or self.max_steps < 0 or self.lr_floor < 0 or self.d_lr < 0:
            raise ConfigurationError("lam, max_steps, lr_floor and d_lr must be non-negative")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Tiny-width variant for the overfit smoke run.

        The generator learns faster and the critic slower than at full scale:
        feature matching is measured in the critic's own (moving) feature
        space, so a fast critic inflates the loss it is meant to track.
        """
        base = dict(batch_size=4, epochs=50, corpus_size=4, width_scale=0.25, disc_width_scale=0.25,
                    lr=2e-3, d_lr=1e-4)
        base.update(overrides)
        return cls(**base)

    def generator_config(self) -> GeneratorConfig:
        widths = tuple(max(1, int(round(w * self.width_scale))) for w in GeneratorConfig().widths)
        return GeneratorConfig(
            widths=widths,
            diaf_iterations=self.diaf_iterations,
            dbi_max_iter=self.dbi_max_iter,
            dbi_tol=self.dbi_tol,
        )

    @property
    def disc_lr(self) -> float:
        return self.d_lr or self.lr

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(self.corpus_size / self.batch_size)

    @property
    def total_steps(self) -> int:
        return self.max_steps or self.epochs * self.steps_per_epoch


def parse_config(text: str) -> TrainConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are rejected."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    defaults = TrainConfig()
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in fields:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        kind = type(getattr(defaults, key))
        try:
            values[key] = kind(value)
        except ValueError as exc:
            raise ConfigurationError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    return TrainConfig(**values)


def load_config(path: str | Path) -> TrainConfig:
    return parse_config(Path(path).read_text())


@dataclass
class TrainStepReport:
    step: int
    losses: LossReport
    lr: float
    wall_ms: float

    def record(self) -> dict:
        return self.losses.as_record(self.step, self.lr)


class TrainState:
    def __init__(self, cfg: TrainConfig, bank: FilterBank | None = None, discriminators=None):
        self.cfg = cfg
        self.bank = bank or default_bank()
        self.generator = Generator(cfg.generator_config(), seed=cfg.seed)
        self.discriminators = discriminators or DiscriminatorEnsemble(
            seed=cfg.seed + 1, bank=self.bank, width_scale=cfg.disc_width_scale
        )
        total = cfg.total_steps
        self.g_opt = AdamState(CosineSchedule(cfg.lr, total, cfg.lr_floor), cfg.beta1, cfg.beta2)
        self.d_opt = AdamState(CosineSchedule(cfg.disc_lr, total, cfg.lr_floor), cfg.beta1, cfg.beta2)
        self.step = 0

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.generator.named_parameters("gen")) + list(self.discriminators.named_parameters("disc"))

    def save(self, path: str | Path) -> None:
        checkpoint.save(path, self.named_parameters())

    def load(self, path: str | Path) -> None:
        checkpoint.load_into(path, self.named_parameters())


def _batch_array(waves: list[Waveform]) -> np.ndarray:
    return np.stack([w.samples for w in waves])[:, None, :]


def _finite(value: float, what: str, step: int) -> float:
    if not math.isfinite(value):
        raise NumericalError(f"step {step}: {what} is {value}")
    return value


def train_step(batch: list[PairedExample], state: TrainState) -> TrainStepReport:
    """One discriminator update followed by one generator update."""
    if not batch:
        raise PreconditionError("empty batch")
    start = time.perf_counter()
    gen, disc, bank = state.generator, state.discriminators, state.bank
    step = state.step + 1

    y = Tensor(_batch_array([ex.clean for ex in batch]))
    with ad.no_grad():
        s_a = analysis_op(Tensor(_batch_array([ex.noisy for ex in batch])), bank)
        s_b = analysis_op(Tensor(_batch_array([ex.bone for ex in batch])), bank)
    y_hat = synthesis_op(gen(s_a, s_b), bank)

    # discriminator phase: generated audio is detached
    real = disc(y)
    fake = disc(y_hat.detach())
    d_terms = disc_terms(real, fake)
    l_d = disc_loss(real, fake)
    _finite(l_d.item(), "discriminator loss", step)
    l_d.backward()
    adam_step(state.d_opt, disc.parameters())
    gen.zero_grad()

    # generator phase: real features are constants
    with ad.no_grad():
        real = disc(y)
    fake = disc(y_hat)
    adv = gen_adv_loss(fake)
    fm = feature_matching_loss(real, fake)
    total = gen_total_loss(adv, fm, state.cfg.lam)
    _finite(total.item(), "generator loss", step)
    total.backward()
    lr = adam_step(state.g_opt, gen.parameters())
    disc.zero_grad()

    state.step = step
    report = LossReport(
        disc=l_d.item(),
        gen_adv=adv.item(),
        gen_fm=fm.item(),
        gen_total=total.item(),
        lam=state.cfg.lam,
        per_disc={"L_D": [t.item() for t in d_terms]},
    )
    return TrainStepReport(step, report, lr, 1000.0 * (time.perf_counter() - start))


def iterate_batches(corpus: list[PairedExample], cfg: TrainConfig):
    """Yield batches forever; epoch order derives from (seed, epoch)."""
    epoch = 0
    while True:
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(corpus))
        for i in range(0, len(order), cfg.batch_size):
            yield [corpus[j] for j in order[i : i + cfg.batch_size]]
        epoch += 1


def train(cfg: TrainConfig, corpus: list[PairedExample] | None = None, log_path: str | Path | None = None,
          state: TrainState | None = None) -> tuple[TrainState, list[TrainStepReport]]:
    corpus = corpus if corpus is not None else make_synthetic_corpus(cfg.corpus_size, cfg.seed)
    state = state or TrainState(cfg)
    reports = []
    sink = open(log_path, "w") if log_path else None
    try:
        batches = iterate_batches(corpus, cfg)
        for _ in range(cfg.total_steps):
            report = train_step(next(batches), state)
            reports.append(report)
            if sink:
                sink.write(json.dumps(report.record()) + "\n")
            if report.step % 10 == 0 or report.step == 1:
                log.info(
                    "step %d  L_D %.4f  L_G_adv %.4f  L_G_fm %.5f  lr %.2e  (%.0f ms)",
                    report.step, report.losses.disc, report.losses.gen_adv, report.losses.gen_fm,
                    report.lr, report.wall_ms,
                )
    finally:
        if sink:
            sink.close()
    return state, reports


# -- inference -------------------------------------------------------------------

def enhance(x_a: Waveform, x_b: Waveform, generator: Generator, bank: FilterBank | None = None) -> Waveform:
    """Analyze both channels, run the generator, synthesize; output length equals input length."""
    bank = bank or default_bank()
    if len(x_a) != len(x_b):
        raise PreconditionError(f"AC and BC lengths differ: {len(x_a)} vs {len(x_b)}")
    n = len(x_a)
    block = bank.bands * generator.cfg.reduction
    padded = max(n + (-n) % block, block * math.ceil(bank.length / block))

    def prep(w: Waveform) -> Tensor:
        x = np.zeros(padded)
        x[:n] = w.samples
        return Tensor(x[None, None])

    with ad.no_grad():
        s_hat = generator(analysis_op(prep(x_a), bank), analysis_op(prep(x_b), bank))
        y_hat = synthesis_op(s_hat, bank)
    return Waveform(y_hat.data[0, 0, :n].astype(np.float64), x_a.rate)


def infer_generator_config(stored: dict[str, np.ndarray], **overrides) -> GeneratorConfig:
    try:
        w0 = stored["gen.stem_a.conv.direction"].shape[0]
        rest = [stored[f"gen.encoders.{i}.0.conv.direction"].shape[0] for i in range(3)]
    except KeyError as exc:
        raise CheckpointError(f"checkpoint has no generator record {exc}") from exc
    return GeneratorConfig(widths=(w0, *rest), **overrides)


def load_generator(path: str | Path, cfg: GeneratorConfig | None = None) -> Generator:
    stored = checkpoint.read(path)
    gen = Generator(cfg or infer_generator_config(stored))
    checkpoint.load_into(path, list(gen.named_parameters("gen")), prefix="gen.")
    return gen
