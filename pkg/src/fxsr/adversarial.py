"""Relativistic average adversarial objective and its critic network.

Each logit is judged relative to the mean logit of the opposite class:
real images should look more realistic than the average fake, fakes more
realistic than the average real. Both generator and critic losses are
binary cross-entropies on those relative probabilities.
"""

import logging
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError, DomainError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

# Probabilities are clamped away from {0, 1} before the log.
PROB_EPS = 1e-12


@dataclass(frozen=True)
class DiscriminatorConfig:
    """Critic layout.

    ``input_size`` is fixed at build time; batch norm plus the dense head
    make the network size-specific on purpose.
    """

    base_width: int = 64
    input_size: int = 128
    in_channels: int = 3

    def __post_init__(self):
        if self.base_width < 1:
            raise ConfigError(f"base_width must be >= 1, got {self.base_width}")
        if self.input_size % 32 != 0 or self.input_size < 32:
            raise ConfigError(
                f"input_size must be a positive multiple of 32, got {self.input_size}"
            )


class Discriminator(nn.Module):
    """VGG-style patch critic: 10 convs, then a two-layer dense head.

    Args:
        config: layout; width doubles every second conv up to 8x base,
            spatial size halves at each stride-2 conv (five times total).
    """

    def __init__(self, config: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        w = config.base_width
        self.config = config
        plan = [w, w, 2 * w, 2 * w, 4 * w, 4 * w, 8 * w, 8 * w, 8 * w, 8 * w]
        layers = []
        in_ch = config.in_channels
        for i, out_ch in enumerate(plan):
            stride = 1 if i % 2 == 0 else 2
            kernel = 3 if stride == 1 else 4
            layers.append(nn.Conv2d(in_ch, out_ch, kernel, stride, 1, bias=(i == 0)))
            if i > 0:
                layers.append(nn.BatchNorm2d(out_ch))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            in_ch = out_ch
        self.body = nn.Sequential(*layers)
        feat_side = config.input_size // 32
        self.head = nn.Sequential(
            nn.Linear(8 * w * feat_side * feat_side, 100),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(100, 1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"expected (B, {self.config.in_channels}, H, W), got {tuple(x.shape)}"
            )
        size = self.config.input_size
        if x.shape[2] != size or x.shape[3] != size:
            raise ShapeError(
                f"critic was built for {size}x{size} inputs, got "
                f"{x.shape[2]}x{x.shape[3]}"
            )
        feat = self.body(x)
        return self.head(feat.flatten(1)).squeeze(1)


@dataclass(frozen=True)
class RelativeProbs:
    """Sigmoid outputs of logits measured against the opposite-class mean."""

    d_real: torch.Tensor
    d_fake: torch.Tensor


def relative_probs(real_logits: torch.Tensor,
                   fake_logits: torch.Tensor) -> RelativeProbs:
    """Relativistic average probabilities for both classes.

    Computed in float64 and clamped away from the interval ends, so the
    returned probabilities are always strictly inside (0, 1) even when a
    logit gap saturates the sigmoid. Raises DomainError on empty inputs and
    NumericalError on non-finite logits; gradients flow through both
    arguments.
    """
    if real_logits.numel() == 0 or fake_logits.numel() == 0:
        raise DomainError("logit batches must be non-empty")
    real = real_logits.flatten().double()
    fake = fake_logits.flatten().double()
    if not bool(torch.isfinite(real).all() & torch.isfinite(fake).all()):
        raise NumericalError("non-finite logits in adversarial loss")
    d_real = _clamp_prob(torch.sigmoid(real - fake.mean()), "real")
    d_fake = _clamp_prob(torch.sigmoid(fake - real.mean()), "fake")
    return RelativeProbs(d_real=d_real, d_fake=d_fake)


def _clamp_prob(p: torch.Tensor, what: str) -> torch.Tensor:
    clamped = torch.clamp(p, PROB_EPS, 1.0 - PROB_EPS)
    n_hit = int((p.detach() != clamped.detach()).sum())
    if n_hit:
        logger.debug("clamped %d saturated probabilities (%s)", n_hit, what)
    return clamped


def generator_adversarial_loss(probs: RelativeProbs) -> torch.Tensor:
    """Push fakes above the average real and reals below the average fake."""
    return (
        -torch.log(probs.d_fake).mean()
        - torch.log(1.0 - probs.d_real).mean()
    )


def discriminator_loss(probs: RelativeProbs) -> torch.Tensor:
    """Mirror image of the generator objective."""
    return (
        -torch.log(probs.d_real).mean()
        - torch.log(1.0 - probs.d_fake).mean()
    )
