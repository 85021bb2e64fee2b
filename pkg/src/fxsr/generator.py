"""Style-modulated super-resolution generator.

A standard residual trunk operating at low-resolution scale is conditioned
on a per-pixel style map through feature-wise affine modulation: a shared
condition branch embeds the map once, and every modulation site computes a
(scale, shift) pair from that embedding, applying ``gamma * F + beta``
before its block. Upsampling happens at the end of the trunk with
nearest-neighbour stages followed by convolutions.

Two trunk layouts are supported: densely connected residual-in-residual
blocks (the default) and plain two-conv residual blocks. Both are built
from the same modulation primitive.
"""

import enum
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ConfigError, DomainError, ShapeError

__all__ = [
    "StyleMap",
    "Backbone",
    "GeneratorConfig",
    "sft_modulate",
    "FlexibleGenerator",
    "generate",
]


@dataclass(frozen=True)
class StyleMap:
    """Per-pixel style control at low-resolution geometry.

    Values are float32 in [0, 1]; shape is exactly the LR image's HxW.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 2:
            raise ShapeError(f"style map must be HxW, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("style map contains non-finite values")
        if arr.size == 0:
            raise ShapeError("style map is empty")
        if float(arr.min()) < 0.0 or float(arr.max()) > 1.0:
            raise DomainError(
                f"style map values must lie in [0, 1], got range "
                f"[{float(arr.min()):g}, {float(arr.max()):g}]"
            )
        object.__setattr__(self, "values", arr)

    @classmethod
    def flat(cls, t: float, shape: tuple[int, int]) -> "StyleMap":
        t = float(t)
        if not 0.0 <= t <= 1.0:
            raise DomainError(f"t must lie in [0, 1], got {t!r}")
        return cls(np.full(shape, t, dtype=np.float32))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def stats(self) -> dict:
        return {
            "min": float(self.values.min()),
            "max": float(self.values.max()),
            "mean": float(self.values.mean()),
        }


class Backbone(enum.Enum):
    RRDB = "rrdb"
    RESBLOCK = "resblock"

    @classmethod
    def parse(cls, name: str) -> "Backbone":
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            raise ConfigError(
                f"unknown backbone {name!r}; expected one of {[b.value for b in cls]}"
            ) from None


@dataclass(frozen=True)
class GeneratorConfig:
    """Generator layout.

    Args:
        scale: upsampling factor, 4 or 8.
        backbone: trunk block type.
        n_blocks: trunk depth; defaults match the published layouts
            (23 dense blocks or 16 plain residual blocks).
        width: trunk channel count.
        growth: dense-block growth channels (ignored for plain blocks).
        cond_width: condition-branch channel count.
    """

    scale: int = 4
    backbone: Backbone = Backbone.RRDB
    n_blocks: int = 23
    width: int = 64
    growth: int = 32
    cond_width: int = 32

    def __post_init__(self):
        if self.scale not in (4, 8):
            raise ConfigError(f"scale must be 4 or 8, got {self.scale}")
        if isinstance(self.backbone, str):
            object.__setattr__(self, "backbone", Backbone.parse(self.backbone))
        for field in ("n_blocks", "width", "growth", "cond_width"):
            if int(getattr(self, field)) < 1:
                raise ConfigError(f"{field} must be >= 1, got {getattr(self, field)}")

    @classmethod
    def full(cls, scale: int = 4, backbone: Backbone = Backbone.RRDB) -> "GeneratorConfig":
        n = 23 if backbone is Backbone.RRDB else 16
        return cls(scale=scale, backbone=backbone, n_blocks=n)

    @classmethod
    def toy(cls, scale: int = 4) -> "GeneratorConfig":
        """Small layout for CPU smoke training."""
        return cls(scale=scale, n_blocks=2, width=16, growth=8, cond_width=16)

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "backbone": self.backbone.value,
            "n_blocks": self.n_blocks,
            "width": self.width,
            "growth": self.growth,
            "cond_width": self.cond_width,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorConfig":
        return cls(**data)


def sft_modulate(features: torch.Tensor, gamma: torch.Tensor,
                 beta: torch.Tensor) -> torch.Tensor:
    """Feature-wise affine modulation: gamma * features + beta."""
    if features.shape != gamma.shape or features.shape != beta.shape:
        raise ShapeError(
            f"modulation shapes must match features: features "
            f"{tuple(features.shape)}, gamma {tuple(gamma.shape)}, "
            f"beta {tuple(beta.shape)}"
        )
    return gamma * features + beta


@torch.no_grad()
def _scaled_init(module: nn.Module, scale: float = 0.1) -> None:
    # Small residual-branch init keeps the trunk near-identity at the start.
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, a=0, mode="fan_in")
            m.weight *= scale
            if m.bias is not None:
                m.bias.zero_()


class ConditionBranch(nn.Module):
    """Embeds the style map once; shared by all modulation sites.

    Pointwise convolutions only, so the embedding stays strictly local to
    each map pixel.
    """

    def __init__(self, cond_width: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(1, cond_width, 1),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(cond_width, cond_width, 1),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(cond_width, cond_width, 1),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(cond_width, cond_width, 1),
        )

    def forward(self, style: torch.Tensor) -> torch.Tensor:
        return self.body(style)


class SFTLayer(nn.Module):
    """Computes (gamma, beta) from the shared condition and applies them.

    The final heads start near identity: gamma close to 1, beta close to 0,
    so an untrained network is only weakly style-dependent.
    """

    def __init__(self, cond_width: int, feat_width: int):
        super().__init__()
        self.gamma_head = nn.Sequential(
            nn.Conv2d(cond_width, cond_width, 1),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(cond_width, feat_width, 1),
        )
        self.beta_head = nn.Sequential(
            nn.Conv2d(cond_width, cond_width, 1),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(cond_width, feat_width, 1),
        )
        _scaled_init(self.gamma_head, 0.1)
        _scaled_init(self.beta_head, 0.1)
        with torch.no_grad():
            self.gamma_head[-1].bias.fill_(1.0)

    def forward(self, features: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        return sft_modulate(features, self.gamma_head(cond), self.beta_head(cond))


class ResidualDenseBlock(nn.Module):
    """Five densely connected convs with a scaled residual."""

    def __init__(self, width: int, growth: int):
        super().__init__()
        self.conv1 = nn.Conv2d(width, growth, 3, 1, 1)
        self.conv2 = nn.Conv2d(width + growth, growth, 3, 1, 1)
        self.conv3 = nn.Conv2d(width + 2 * growth, growth, 3, 1, 1)
        self.conv4 = nn.Conv2d(width + 3 * growth, growth, 3, 1, 1)
        self.conv5 = nn.Conv2d(width + 4 * growth, width, 3, 1, 1)
        self.lrelu = nn.LeakyReLU(0.2, inplace=True)
        _scaled_init(self, 0.1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x1 = self.lrelu(self.conv1(x))
        x2 = self.lrelu(self.conv2(torch.cat((x, x1), 1)))
        x3 = self.lrelu(self.conv3(torch.cat((x, x1, x2), 1)))
        x4 = self.lrelu(self.conv4(torch.cat((x, x1, x2, x3), 1)))
        x5 = self.conv5(torch.cat((x, x1, x2, x3, x4), 1))
        return x5 * 0.2 + x


class ModulatedRRDB(nn.Module):
    """Residual-in-residual dense block with modulation before each dense block."""

    def __init__(self, width: int, growth: int, cond_width: int):
        super().__init__()
        self.sfts = nn.ModuleList(SFTLayer(cond_width, width) for _ in range(3))
        self.blocks = nn.ModuleList(
            ResidualDenseBlock(width, growth) for _ in range(3)
        )

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        out = x
        for sft, block in zip(self.sfts, self.blocks):
            out = block(sft(out, cond))
        return out * 0.2 + x


class ModulatedResBlock(nn.Module):
    """Two-conv residual block with modulation before each convolution."""

    def __init__(self, width: int, cond_width: int):
        super().__init__()
        self.sft1 = SFTLayer(cond_width, width)
        self.conv1 = nn.Conv2d(width, width, 3, 1, 1)
        self.sft2 = SFTLayer(cond_width, width)
        self.conv2 = nn.Conv2d(width, width, 3, 1, 1)
        _scaled_init(self.conv1, 0.1)
        _scaled_init(self.conv2, 0.1)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        out = self.conv1(F.relu(self.sft1(x, cond)))
        out = self.conv2(self.sft2(out, cond))
        return out + x


class FlexibleGenerator(nn.Module):
    """Super-resolver whose output style is set by a per-pixel map.

    Args:
        config: layout; see :class:`GeneratorConfig`.

    forward() takes the LR batch (B, 3, h, w) and a matching style map
    batch (B, 1, h, w) and returns (B, 3, scale*h, scale*w). Outputs are
    intentionally not clipped; export-time quantisation handles range.
    """

    def __init__(self, config: GeneratorConfig = GeneratorConfig()):
        super().__init__()
        self.config = config
        width = config.width
        self.conv_first = nn.Conv2d(3, width, 3, 1, 1)
        self.condition = ConditionBranch(config.cond_width)
        if config.backbone is Backbone.RRDB:
            self.blocks = nn.ModuleList(
                ModulatedRRDB(width, config.growth, config.cond_width)
                for _ in range(config.n_blocks)
            )
        else:
            self.blocks = nn.ModuleList(
                ModulatedResBlock(width, config.cond_width)
                for _ in range(config.n_blocks)
            )
        self.trunk_conv = nn.Conv2d(width, width, 3, 1, 1)
        n_up = {4: 2, 8: 3}[config.scale]
        self.up_convs = nn.ModuleList(
            nn.Conv2d(width, width, 3, 1, 1) for _ in range(n_up)
        )
        self.hr_conv = nn.Conv2d(width, width, 3, 1, 1)
        self.conv_last = nn.Conv2d(width, 3, 3, 1, 1)
        self.lrelu = nn.LeakyReLU(0.2, inplace=True)
        _scaled_init(self.trunk_conv, 0.1)

    def forward(self, lr: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        if lr.dim() != 4 or lr.shape[1] != 3:
            raise ShapeError(f"expected LR batch (B, 3, h, w), got {tuple(lr.shape)}")
        if style.dim() != 4 or style.shape[1] != 1:
            raise ShapeError(
                f"expected style batch (B, 1, h, w), got {tuple(style.shape)}"
            )
        if style.shape[0] != lr.shape[0] or style.shape[2:] != lr.shape[2:]:
            raise ShapeError(
                f"style map {tuple(style.shape[2:])} does not match LR "
                f"{tuple(lr.shape[2:])}"
            )
        cond = self.condition(style)
        feat = self.conv_first(lr)
        out = feat
        for block in self.blocks:
            out = block(out, cond)
        feat = feat + self.trunk_conv(out)
        for conv in self.up_convs:
            feat = self.lrelu(conv(F.interpolate(feat, scale_factor=2, mode="nearest")))
        return self.conv_last(self.lrelu(self.hr_conv(feat)))


def generate(model: FlexibleGenerator, lr_image: np.ndarray,
             style_map: StyleMap) -> np.ndarray:
    """Super-resolve one image; returns unclipped float32 HxWx3.

    The style map must already be at the LR image's exact dimensions;
    nothing is resized implicitly.
    """
    if lr_image.ndim != 3 or lr_image.shape[2] != 3:
        raise ShapeError(f"expected HxWx3 LR image, got shape {lr_image.shape}")
    if style_map.shape != lr_image.shape[:2]:
        raise ShapeError(
            f"style map {style_map.shape} does not match LR dimensions "
            f"{lr_image.shape[:2]}; resize the map explicitly first"
        )
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            dtype = next(model.parameters()).dtype
            lr = torch.from_numpy(
                np.ascontiguousarray(lr_image.transpose(2, 0, 1), dtype=np.float32)
            )[None].to(dtype)
            style = torch.from_numpy(style_map.values)[None, None].to(dtype)
            sr = model(lr, style)
    finally:
        if was_training:
            model.train()
    return sr[0].float().numpy().transpose(1, 2, 0)
