"""Central finite-difference checks for every primitive and assembled module.

All checks run in 64-bit mode with step h=1e-4 and pass when the relative
error ||analytic - numeric|| / max(||analytic||, ||numeric||) is <= 1e-3.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .discriminators import ConvStack, DiscriminatorOutput, SLOPE
from .generator import (
    BalancedInteraction,
    CrossBranchGate,
    DecoderScale,
    EncoderScale,
    Generator,
    GeneratorConfig,
    IterativeAttentionFusion,
    Stem,
)
from .losses import disc_loss, feature_matching_loss, gen_adv_loss, gen_total_loss
from .pqmf import analysis_op, default_bank, synthesis_op

STEP = 1e-4
TOLERANCE = 1e-3


@dataclass
class GradCheckResult:
    name: str
    seed: int
    rel_error: float
    checked: int = 0
    skipped: int = 0  # coordinates whose +-h probe crossed a kink

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.rel_error <= TOLERANCE


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def _same_branches(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def _evaluate(loss_fn: Callable[[], Tensor]) -> tuple[float, list]:
    with ad.no_grad(), ad.record_branches() as branches:
        value = loss_fn().item()
    return value, branches


def check(
    loss_fn: Callable[[], Tensor],
    params: list[Tensor],
    h: float = STEP,
    max_entries: int | None = 24,
    rng: np.random.Generator | None = None,
) -> tuple[float, int, int]:
    """Compare backprop against central differences on (a sample of) entries.

    A coordinate is skipped when either probe takes a different discrete branch
    (leaky-ReLU side, |x| sign, selected iterate) than the unperturbed pass:
    the function is not differentiable across that step. Returns
    ``(relative_error, checked, skipped)``.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.grad = None
    with ad.record_branches() as base:
        loss = loss_fn()
    loss.backward()
    base = list(base)
    analytic, numeric = [], []
    skipped = 0
    for p in params:
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up, up_branches = _evaluate(loss_fn)
            flat[i] = orig - h
            down, down_branches = _evaluate(loss_fn)
            flat[i] = orig
            if not (_same_branches(base, up_branches) and _same_branches(base, down_branches)):
                skipped += 1
                continue
            numeric.append((up - down) / (2 * h))
            analytic.append(grad.reshape(-1)[i])
    return relative_error(np.array(analytic), np.array(numeric)), len(numeric), skipped


def _leaf(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _probe(out: Tensor, seed: int) -> Tensor:
    # fixed random linear functional, so every output element matters
    weights = np.random.default_rng(seed).standard_normal(out.shape)
    return ad.sum_(out * Tensor(weights))


# -- primitive cases ---------------------------------------------------------------

def _case_pointwise(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    s = _leaf(rng)

    def f():
        y = ad.sigmoid(a) * ad.tanh(b) + ad.leaky_relu(a - b, SLOPE) * s
        return _probe(y + ad.abs_(b) + ad.relu(a) + a**2, 6)

    return f, [a, b, s]


def _case_reductions(rng):
    x = _leaf(rng, 2, 3, 5)
    w = Tensor(rng.standard_normal((2, 3)))

    def f():
        pooled = ad.global_avg_pool(x)
        shaped = ad.transpose(ad.reshape(x, (6, 5)), (1, 0))
        picked = ad.concat([shaped[1:3], shaped[:1]], axis=0)
        stacked = ad.stack([pooled, pooled * 2.0], axis=0)
        spread = ad.broadcast_to(ad.reshape(pooled, (2, 3, 1)), (2, 3, 5))
        return ad.sum_(pooled * w) + ad.mean(picked**2) + ad.sum_(stacked, axis=0).sum() + ad.mean(spread * x)

    return f, [x]


def _case_matmul(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 2)
    w, bias = _leaf(rng, 5, 2), _leaf(rng, 5)

    def f():
        return _probe(ad.linear(ad.matmul(a, b), w, bias), 7)

    return f, [a, b, w, bias]


def _case_weight_norm(rng):
    v, g = _leaf(rng, 4, 2, 3), _leaf(rng, 4)

    def f():
        return _probe(ad.weight_norm(v, g, 0), 8)

    return f, [v, g]


def _case_conv1d(rng):
    x, w, b = _leaf(rng, 2, 4, 11), _leaf(rng, 6, 2, 3), _leaf(rng, 6)

    def f():
        return _probe(ad.conv1d(x, w, b, stride=2, dilation=2, groups=2, padding=2), 9)

    return f, [x, w, b]


def _case_conv_transpose1d(rng):
    x, w, b = _leaf(rng, 2, 3, 5), _leaf(rng, 3, 4, 4), _leaf(rng, 4)

    def f():
        return _probe(ad.conv_transpose1d(x, w, b, stride=2, padding=1), 10)

    return f, [x, w, b]


def _case_gather(rng):
    states = [_leaf(rng, 4, 3) for _ in range(3)]
    index = np.array([0, 2, 1, 2])

    def f():
        return _probe(ad.gather_rows(states, index), 11)

    return f, states


def _case_pqmf(rng):
    x = _leaf(rng, 1, 1, 128)
    s = _leaf(rng, 1, 4, 32)
    bank = default_bank()

    def f():
        return _probe(analysis_op(x, bank), 12) + _probe(synthesis_op(s, bank), 13)

    return f, [x, s]


# -- module cases --------------------------------------------------------------------

def _case_stem(rng):
    stem = Stem(4, 5, 7, rng)
    x = _leaf(rng, 1, 4, 32)
    return (lambda: _probe(stem(x), 14)), stem.parameters() + [x]


def _case_cbgi(rng):
    gate = CrossBranchGate(3, rng)
    for p in gate.parameters():
        p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    xs = [_leaf(rng, 2, 3, 5) for _ in range(3)]

    def f():
        a, b, fused = gate(*xs)
        return _probe(a, 15) + _probe(b, 16) + _probe(fused, 17)

    return f, gate.parameters() + xs


def _case_diaf(rng):
    diaf = IterativeAttentionFusion(4, 3, 2, rng)
    for p in diaf.parameters():
        p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    xa, xb = _leaf(rng, 2, 4, 6), _leaf(rng, 2, 4, 6)
    return (lambda: _probe(diaf(xa, xb)[0], 16)), diaf.parameters() + [xa, xb]


def _case_dbi(rng):
    # two frames, fixed iteration budget so the selected iterate is stable under perturbation
    dbi = BalancedInteraction(3, rng, max_iter=8, tol=0.0)
    xs = [_leaf(rng, 1, 3, 2) for _ in range(3)]
    return (lambda: _probe(dbi(*xs)[0], 17)), dbi.parameters() + xs


def _case_encoder_decoder(rng):
    cfg = GeneratorConfig(widths=(2, 3, 4, 5))
    enc = EncoderScale(2, 3, cfg, rng)
    dec = DecoderScale(3, 2, cfg, rng)
    x = _leaf(rng, 1, 2, 16)
    return (lambda: _probe(dec(enc(x), x), 18)), enc.parameters() + dec.parameters() + [x]


def _toy_waveform_disc(rng):
    return ConvStack(((1, 4, 15, 1, 1), (4, 8, 41, 4, 4), (8, 1, 3, 1, 1)), rng)


def _toy_subband_disc(rng):
    return ConvStack(((4, 8, 3, 1, 4), (8, 8, 7, 2, 4), (8, 1, 3, 1, 1)), rng, dilation=2)


def _case_d_wav(rng):
    disc = _toy_waveform_disc(rng)
    x = _leaf(rng, 1, 1, 96)

    def f():
        out = disc.run(x)
        return _probe(out.score, 19) + ad.sum_(out.features[-1])

    return f, disc.parameters() + [x]


def _case_d_sub(rng):
    disc = _toy_subband_disc(rng)
    bank = default_bank()
    x = _leaf(rng, 1, 1, 128)

    def f():
        out = disc.run(analysis_op(x, bank))
        return _probe(out.score, 20) + ad.sum_(out.features[0])

    return f, disc.parameters() + [x]


def _loss_inputs(rng):
    wav = _toy_waveform_disc(rng)
    sub = _toy_subband_disc(rng)
    bank = default_bank()
    y = Tensor(rng.standard_normal((2, 1, 128)))
    y_hat = _leaf(rng, 2, 1, 128)

    def outputs(x) -> list[DiscriminatorOutput]:
        return [wav.run(x), sub.run(analysis_op(x, bank))]

    return wav.parameters() + sub.parameters(), y, y_hat, outputs


def _case_loss_disc(rng):
    params, y, y_hat, outputs = _loss_inputs(rng)
    return (lambda: disc_loss(outputs(y), outputs(y_hat))), params + [y_hat]


def _case_loss_adv(rng):
    params, _, y_hat, outputs = _loss_inputs(rng)
    return (lambda: gen_adv_loss(outputs(y_hat))), params + [y_hat]


def _case_loss_fm(rng):
    params, y, y_hat, outputs = _loss_inputs(rng)
    return (lambda: feature_matching_loss(outputs(y), outputs(y_hat))), params + [y_hat]


def _case_loss_total(rng):
    params, y, y_hat, outputs = _loss_inputs(rng)

    def f():
        fake = outputs(y_hat)
        return gen_total_loss(gen_adv_loss(fake), feature_matching_loss(outputs(y), fake), 1000.0)

    return f, params + [y_hat]


def _case_generator(rng):
    cfg = GeneratorConfig(widths=(2, 3, 4, 5), dbi_max_iter=6, dbi_tol=0.0, cam_reduction=2)
    gen = Generator(cfg, seed=int(rng.integers(1 << 30)))
    for p in gen.parameters():
        p.data = p.data + 0.05 * rng.standard_normal(p.shape)
    sa, sb = Tensor(rng.standard_normal((1, 4, 64))), Tensor(rng.standard_normal((1, 4, 64)))
    params = gen.parameters()
    picks = [params[i] for i in rng.choice(len(params), 10, replace=False)]
    return (lambda: _probe(gen(sa, sb), 21)), picks


PRIMITIVES: dict[str, Callable] = {
    "pointwise": _case_pointwise,
    "reductions+shape": _case_reductions,
    "matmul+linear": _case_matmul,
    "weight_norm": _case_weight_norm,
    "conv1d": _case_conv1d,
    "conv_transpose1d": _case_conv_transpose1d,
    "gather_rows": _case_gather,
    "pqmf": _case_pqmf,
}

MODULES: dict[str, Callable] = {
    "stem": _case_stem,
    "cbgi": _case_cbgi,
    "diaf(K=3)": _case_diaf,
    "dbi(2 frames)": _case_dbi,
    "encoder+decoder": _case_encoder_decoder,
    "d_wav(toy)": _case_d_wav,
    "d_sub(toy)": _case_d_sub,
    "loss:disc": _case_loss_disc,
    "loss:gen_adv": _case_loss_adv,
    "loss:feature_matching": _case_loss_fm,
    "loss:gen_total": _case_loss_total,
    "generator(4x64)": _case_generator,
}


def run_case(name: str, seed: int) -> GradCheckResult:
    build = {**PRIMITIVES, **MODULES}[name]
    with ad.precision(64):
        rng = np.random.default_rng(seed)
        loss_fn, params = build(rng)
        err, checked, skipped = check(loss_fn, params, rng=np.random.default_rng(seed + 100))
    return GradCheckResult(name, seed, err, checked, skipped)


def run_suite(seeds=range(5), names=None) -> list[GradCheckResult]:
    names = names or list(PRIMITIVES) + list(MODULES)
    return [run_case(name, seed) for name in names for seed in seeds]
