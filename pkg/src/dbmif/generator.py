"""Three-branch subband generator: input stems, iterative attention fusion,
gated cross-branch interaction at every scale and a fixed-point bottleneck."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, NumericalError, PreconditionError
from .nn import Conv1d, ConvTranspose1d, Linear, Module
from .pqmf import SubbandTensor


@dataclass
class GeneratorConfig:
    bands: int = 4
    widths: tuple[int, ...] = (32, 64, 128, 256)
    kernel: int = 8
    stride: int = 2
    padding: int = 3
    stem_kernel: int = 7
    diaf_iterations: int = 3
    dbi_max_iter: int = 50
    dbi_tol: float = 1e-4
    cam_reduction: int = 4
    slope: float = 0.1

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) != 4 or any(b <= a for a, b in zip(self.widths, self.widths[1:])):
            raise ConfigurationError(f"widths must be 4 strictly increasing values, got {self.widths}")
        if self.dbi_max_iter < 2:
            raise ConfigurationError("dbi_max_iter must be at least 2")
        if self.diaf_iterations < 1:
            raise ConfigurationError("diaf_iterations must be at least 1")

    @property
    def reduction(self) -> int:
        return self.stride ** len(self.widths)

    @classmethod
    def desk(cls, **overrides) -> "GeneratorConfig":
        return cls(widths=(8, 16, 32, 64), **overrides)


@dataclass
class AttentionWeights:
    weights: list[np.ndarray]  # K arrays of shape (B, C)

    @property
    def iterations(self) -> int:
        return len(self.weights)


@dataclass
class GateSet:
    g_fa: Tensor | None
    g_fb: Tensor | None
    g_a: Tensor
    g_b: Tensor


@dataclass
class EquilibriumState:
    """Selected fixed-point iterate plus convergence telemetry, one row per frame."""

    z_star: Tensor
    kstar: np.ndarray  # (R,) selected iteration, in [2, max_iter]
    deltas: np.ndarray  # (executed - 1, R); row j is delta_{j+2}, NaN after a frame stopped
    stop_iteration: np.ndarray  # (R,)
    executed: int
    max_iter: int


@dataclass
class GeneratorTrace:
    attention: AttentionWeights | None = None
    equilibrium: EquilibriumState | None = None
    shapes: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)


def _same_shapes(*maps: Tensor, where: str) -> None:
    if len({m.shape for m in maps}) != 1:
        raise ConfigurationError(f"{where}: branch shapes differ {[m.shape for m in maps]}")


class Stem(Module):
    """Subbands (B, M, T) -> first-scale features (B, C0, T)."""

    def __init__(self, bands: int, width: int, kernel: int, rng, slope: float = 0.1):
        self.bands = bands
        self.slope = slope
        self.conv = Conv1d(bands, width, kernel, rng, padding="same")

    def forward(self, s: Tensor) -> Tensor:
        if s.shape[-2] != self.bands:
            raise ConfigurationError(f"stem expects {self.bands} bands, got {s.shape[-2]}")
        return ad.leaky_relu(self.conv(s), self.slope)


class ChannelAttention(Module):
    """Pool over frames, squeeze to C/r, expand back to C, squash to (0, 1)."""

    def __init__(self, channels: int, reduction: int, rng, slope: float = 0.1):
        hidden = max(1, channels // reduction)
        self.slope = slope
        self.squeeze = Linear(channels, hidden, rng)
        self.expand = Linear(hidden, channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        pooled = ad.global_avg_pool(x)
        return ad.sigmoid(self.expand(ad.leaky_relu(self.squeeze(pooled), self.slope)))


class IterativeAttentionFusion(Module):
    """K rounds of channel-wise soft selection between AC and BC features."""

    def __init__(self, channels: int, iterations: int, reduction: int, rng, slope: float = 0.1):
        if iterations < 1:
            raise ConfigurationError("fusion needs at least one iteration")
        self.iterations = iterations
        self.cam = ChannelAttention(channels, reduction, rng, slope)

    def forward(self, x_a: Tensor, x_b: Tensor) -> tuple[Tensor, AttentionWeights]:
        _same_shapes(x_a, x_b, where="diaf")
        fused = x_a + x_b
        gap = x_a - x_b
        weights = []
        for _ in range(self.iterations):
            w = ad.broadcast_to(ad.reshape(self.cam(fused), fused.shape[:-1] + (1,)), fused.shape)
            # w*a + (1-w)*b, arranged to be exact for w == 1 and for a == b
            fused = x_a - (1.0 - w) * gap
            weights.append(w.data[..., 0].copy())
        return fused, AttentionWeights(weights)


class CrossBranchGate(Module):
    """Fusion->unimodal gating, then unimodal->fusion feedback; eight 1x1 convs.

    With ``fusion_only`` the first stage is dropped and the unimodal streams
    pass through untouched (used where nothing downstream reads them).
    """

    def __init__(self, channels: int, rng, fusion_only: bool = False):
        def pointwise_conv():
            return Conv1d(channels, channels, 1, rng)

        self.fusion_only = fusion_only
        if not fusion_only:
            self.gate_fa = pointwise_conv()
            self.proj_a = pointwise_conv()
            self.gate_fb = pointwise_conv()
            self.proj_b = pointwise_conv()
        self.gate_a = pointwise_conv()
        self.proj_fa = pointwise_conv()
        self.gate_b = pointwise_conv()
        self.proj_fb = pointwise_conv()

    def forward(self, x_a: Tensor, x_b: Tensor, x_f: Tensor, return_gates: bool = False):
        _same_shapes(x_a, x_b, x_f, where="cbgi")
        if self.fusion_only:
            g_fa = g_fb = None
            new_a, new_b = x_a, x_b
        else:
            g_fa = ad.sigmoid(self.gate_fa(x_f))
            g_fb = ad.sigmoid(self.gate_fb(x_f))
            new_a = g_fa * self.proj_a(x_a)
            new_b = g_fb * self.proj_b(x_b)
        g_a = ad.sigmoid(self.gate_a(x_a))
        g_b = ad.sigmoid(self.gate_b(x_b))
        new_f = g_a * self.proj_fa(x_f) + g_b * self.proj_fb(x_f)
        if return_gates:
            return new_a, new_b, new_f, GateSet(g_fa, g_fb, g_a, g_b)
        return new_a, new_b, new_f


class EncoderScale(Module):
    def __init__(self, c_in: int, c_out: int, cfg: GeneratorConfig, rng):
        self.stride = cfg.stride
        self.slope = cfg.slope
        self.conv = Conv1d(c_in, c_out, cfg.kernel, rng, stride=cfg.stride, padding=cfg.padding)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-2] != self.conv.in_channels:
            raise ConfigurationError(f"encoder expects {self.conv.in_channels} channels, got {x.shape[-2]}")
        if x.shape[-1] % self.stride:
            raise PreconditionError(f"{x.shape[-1]} frames not divisible by stride {self.stride}")
        return ad.leaky_relu(self.conv(x), self.slope)


class DecoderScale(Module):
    def __init__(self, c_in: int, c_out: int, cfg: GeneratorConfig, rng):
        self.slope = cfg.slope
        self.conv = ConvTranspose1d(c_in, c_out, cfg.kernel, rng, stride=cfg.stride, padding=cfg.padding)

    def forward(self, x: Tensor, skip: Tensor) -> Tensor:
        up = ad.leaky_relu(self.conv(x), self.slope)
        if up.shape != skip.shape:
            raise ConfigurationError(f"decoder output {up.shape} does not match skip {skip.shape}")
        return up + skip


def fixed_point(
    update: Callable[[Tensor], Tensor],
    z0: Tensor,
    max_iter: int = 50,
    tol: float = 1e-4,
) -> EquilibriumState:
    """Iterate ``update`` row-wise from ``z0`` and keep each row's calmest iterate.

    delta_k is the L2 norm of a row's change at iteration k (k >= 2). A row stops
    once delta_k < tol; iteration ends when every row has stopped or at
    ``max_iter``. Each row returns the iterate with the smallest delta over the
    iterations it executed. All iterates stay on the tape, so gradients flow
    through the unrolled loop.
    """
    if max_iter < 2:
        raise ConfigurationError("fixed_point needs max_iter >= 2")
    rows = z0.shape[0]
    states = [z0]
    deltas: list[np.ndarray] = []
    active = np.ones(rows, dtype=bool)
    stop = np.full(rows, max_iter)
    prev = z0
    executed = 0
    for k in range(1, max_iter + 1):
        z = update(prev)
        bad = ~np.isfinite(z.data).reshape(rows, -1).all(axis=1)
        if bad.any():
            raise NumericalError(f"non-finite state in frame {int(np.argmax(bad))} at iteration {k}")
        states.append(z)
        executed = k
        if k >= 2:
            d = np.sqrt(((z.data - prev.data).reshape(rows, -1).astype(np.float64) ** 2).sum(axis=1))
            d[~active] = np.nan
            deltas.append(d)
            done = active & (d < tol)
            stop[done] = k
            active &= ~done
            if not active.any():
                break
        prev = z
    stop[active] = executed
    table = np.stack(deltas)  # row j <-> iteration j + 2
    masked = np.where(np.isnan(table), np.inf, table)
    kstar = np.argmin(masked, axis=0) + 2
    return EquilibriumState(
        z_star=ad.gather_rows(states, kstar),
        kstar=kstar,
        deltas=table,
        stop_iteration=stop,
        executed=executed,
        max_iter=max_iter,
    )


class BalancedInteraction(Module):
    """Parameter-shared fixed-point refinement of the bottleneck, per frame.

    One update: z_c <- tanh(W_c z_c + U_c x_c) for c in {a, b}, then
    z_f <- tanh(W_f [z_a; z_b; z_f] + U_f x_f), with the fresh z_a, z_b.
    """

    def __init__(self, channels: int, rng, max_iter: int = 50, tol: float = 1e-4):
        c = channels
        self.channels = c
        self.max_iter = max_iter
        self.tol = tol
        # half-scale recurrent weights keep the initial map near-contractive
        self.w_a = Linear(c, c, rng, bias=False)
        self.w_b = Linear(c, c, rng, bias=False)
        self.w_f = Linear(3 * c, c, rng, bias=False)
        for lin in (self.w_a, self.w_b, self.w_f):
            lin.weight.data = lin.weight.data * 0.5
        self.u_a = Linear(c, c, rng)
        self.u_b = Linear(c, c, rng)
        self.u_f = Linear(c, c, rng)

    @staticmethod
    def to_rows(x: Tensor) -> Tensor:
        b, c, t = x.shape
        return ad.reshape(ad.transpose(x, (0, 2, 1)), (b * t, c))

    @staticmethod
    def from_rows(z: Tensor, batch: int, frames: int) -> Tensor:
        return ad.transpose(ad.reshape(z, (batch, frames, z.shape[-1])), (0, 2, 1))

    def update_fn(self, x_a: Tensor, x_b: Tensor, x_f: Tensor) -> Callable[[Tensor], Tensor]:
        c = self.channels
        inj_a, inj_b, inj_f = self.u_a(x_a), self.u_b(x_b), self.u_f(x_f)

        def update(z: Tensor) -> Tensor:
            za = ad.tanh(self.w_a(z[:, :c]) + inj_a)
            zb = ad.tanh(self.w_b(z[:, c : 2 * c]) + inj_b)
            zf = ad.tanh(self.w_f(ad.concat([za, zb, z[:, 2 * c :]], axis=1)) + inj_f)
            return ad.concat([za, zb, zf], axis=1)

        return update

    def forward(self, x_a: Tensor, x_b: Tensor, x_f: Tensor) -> tuple[Tensor, EquilibriumState]:
        _same_shapes(x_a, x_b, x_f, where="dbi")
        batch, c, frames = x_f.shape
        if c != self.channels:
            raise ConfigurationError(f"dbi expects {self.channels} channels, got {c}")
        rows = [self.to_rows(x) for x in (x_a, x_b, x_f)]
        z0 = Tensor(np.zeros((batch * frames, 3 * c)))
        state = fixed_point(self.update_fn(*rows), z0, self.max_iter, self.tol)
        z_f = state.z_star[:, 2 * c :]
        return self.from_rows(z_f, batch, frames), state


class Generator(Module):
    """Maps AC and BC subbands (B, M, T) to estimated clean subbands (B, M, T)."""

    def __init__(self, cfg: GeneratorConfig | None = None, seed: int = 0):
        cfg = cfg or GeneratorConfig()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        w = cfg.widths
        self.stem_a = Stem(cfg.bands, w[0], cfg.stem_kernel, rng, cfg.slope)
        self.stem_b = Stem(cfg.bands, w[0], cfg.stem_kernel, rng, cfg.slope)
        self.diaf = IterativeAttentionFusion(w[0], cfg.diaf_iterations, cfg.cam_reduction, rng, cfg.slope)
        enc_io = [(w[0], w[1]), (w[1], w[2]), (w[2], w[3]), (w[3], w[3])]
        dec_io = [(w[3], w[3]), (w[3], w[2]), (w[2], w[1]), (w[1], w[0])]
        self.encoders = [[EncoderScale(i, o, cfg, rng) for _ in "abf"] for i, o in enc_io]
        self.encoder_gates = [CrossBranchGate(o, rng) for _, o in enc_io]
        self.dbi = BalancedInteraction(w[3], rng, cfg.dbi_max_iter, cfg.dbi_tol)
        self.decoders = [[DecoderScale(i, o, cfg, rng) for _ in "abf"] for i, o in dec_io]
        # the last scale's unimodal outputs are never read, so it keeps only the feedback stage
        self.decoder_gates = [CrossBranchGate(o, rng, fusion_only=i == 3) for i, (_, o) in enumerate(dec_io)]
        self.head = Conv1d(w[0], cfg.bands, 1, rng)
        self.trace = GeneratorTrace()

    def check_input(self, s: Tensor) -> None:
        if s.ndim != 3 or s.shape[1] != self.cfg.bands:
            raise ConfigurationError(f"expected (batch, {self.cfg.bands}, frames) subbands, got {s.shape}")
        if s.shape[-1] % self.cfg.reduction:
            raise PreconditionError(f"{s.shape[-1]} frames not divisible by {self.cfg.reduction}")

    def forward(self, s_a: Tensor, s_b: Tensor) -> Tensor:
        self.check_input(s_a)
        self.check_input(s_b)
        if s_a.shape != s_b.shape:
            raise ConfigurationError(f"modality shapes differ: {s_a.shape} vs {s_b.shape}")
        trace = GeneratorTrace()
        x_a, x_b = self.stem_a(s_a), self.stem_b(s_b)
        x_f, trace.attention = self.diaf(x_a, x_b)
        trace.shapes.append(("scale0", x_f.shape))
        skips = []
        for convs, gate in zip(self.encoders, self.encoder_gates):
            skips.append((x_a, x_b, x_f))
            x_a, x_b, x_f = gate(convs[0](x_a), convs[1](x_b), convs[2](x_f))
            trace.shapes.append((f"enc{len(skips)}", x_f.shape))
        x_f, trace.equilibrium = self.dbi(x_a, x_b, x_f)
        for convs, gate, (s_a_, s_b_, s_f_) in zip(self.decoders, self.decoder_gates, reversed(skips)):
            x_a, x_b, x_f = gate(convs[0](x_a, s_a_), convs[1](x_b, s_b_), convs[2](x_f, s_f_))
            trace.shapes.append((f"dec{len(trace.shapes) - 4}", x_f.shape))
        self.trace = trace
        return ad.tanh(self.head(x_f))


def generator_forward(gen: Generator, s_a: SubbandTensor, s_b: SubbandTensor) -> SubbandTensor:
    with ad.no_grad():
        out = gen(Tensor(s_a.bands[None]), Tensor(s_b.bands[None]))
    return SubbandTensor(out.data[0], "estimate", s_a.original_length)
