"""Hinge adversarial objectives and discriminator feature matching."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import autodiff as ad
from .autodiff import Tensor
from .discriminators import DiscriminatorOutput
from .errors import PreconditionError

DEFAULT_LAMBDA = 1000.0


@dataclass
class LossReport:
    disc: float
    gen_adv: float
    gen_fm: float
    gen_total: float
    lam: float
    per_disc: dict[str, list[float]] = field(default_factory=dict)

    def as_record(self, step: int, lr: float) -> dict:
        return {
            "step": step,
            "L_D": self.disc,
            "L_G_adv": self.gen_adv,
            "L_G_fm": self.gen_fm,
            "L_G": self.gen_total,
            "LR": lr,
        }


def _check_pairs(real: list[DiscriminatorOutput], fake: list[DiscriminatorOutput]) -> None:
    if len(real) != len(fake):
        raise PreconditionError(f"{len(real)} real vs {len(fake)} fake discriminator outputs")
    for k, (r, f) in enumerate(zip(real, fake)):
        if r.score.shape != f.score.shape:
            raise PreconditionError(f"discriminator {k}: score shapes {r.score.shape} vs {f.score.shape}")


def _hinge(scores: Tensor, sign: float) -> Tensor:
    # mean(max(0, 1 + sign * D))
    return ad.mean(ad.relu(1.0 + sign * scores))


def disc_terms(real: list[DiscriminatorOutput], fake: list[DiscriminatorOutput]) -> list[Tensor]:
    _check_pairs(real, fake)
    return [_hinge(r.score, -1.0) + _hinge(f.score, 1.0) for r, f in zip(real, fake)]


def disc_loss(real: list[DiscriminatorOutput], fake: list[DiscriminatorOutput]) -> Tensor:
    terms = disc_terms(real, fake)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def gen_adv_terms(fake: list[DiscriminatorOutput]) -> list[Tensor]:
    return [_hinge(f.score, -1.0) for f in fake]


def gen_adv_loss(fake: list[DiscriminatorOutput]) -> Tensor:
    terms = gen_adv_terms(fake)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def feature_matching_terms(real: list[DiscriminatorOutput], fake: list[DiscriminatorOutput]) -> list[Tensor]:
    if len(real) != len(fake):
        raise PreconditionError(f"{len(real)} real vs {len(fake)} fake discriminator outputs")
    terms = []
    for k, (r, f) in enumerate(zip(real, fake)):
        if len(r.features) != len(f.features):
            raise PreconditionError(f"discriminator {k}: {len(r.features)} vs {len(f.features)} feature maps")
        term = None
        for i, (fr, ff) in enumerate(zip(r.features, f.features)):
            if fr.shape != ff.shape:
                raise PreconditionError(f"discriminator {k} feature {i}: {fr.shape} vs {ff.shape}")
            # (1/M_i) * L1 distance == mean absolute difference
            layer = ad.mean(ad.abs_(fr - ff))
            term = layer if term is None else term + layer
        terms.append(term if term is not None else Tensor(0.0))
    return terms


def feature_matching_loss(real: list[DiscriminatorOutput], fake: list[DiscriminatorOutput]) -> Tensor:
    terms = feature_matching_terms(real, fake)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def gen_total_loss(adv: Tensor, fm: Tensor, lam: float = DEFAULT_LAMBDA) -> Tensor:
    if lam < 0:
        raise PreconditionError(f"lambda must be non-negative, got {lam}")
    return adv + lam * fm
