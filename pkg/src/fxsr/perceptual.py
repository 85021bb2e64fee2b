"""Frozen feature extractor and the style-conditioned perceptual objective.

The perceptual distance is measured in the feature space of a fixed
VGG-19-shaped convolutional stack, tapped after the activation of the last
convolution of stages 2 through 5 (shallow to deep). Four tap depths map
onto :class:`~fxsr.schedules.FeatureLevel`.

Weights come from one of three sources:

* ``seeded:<seed>[:width_scale]`` builds a randomly initialised stack
  deterministically from the seed. Layer magnitudes are then calibrated on
  a fixed reference batch so that per-image feature norms at each tap are
  O(1) at the reference resolution. Without this the raw feature distances
  would dwarf the pixel and adversarial terms and the published loss
  constants would lose their meaning.
* ``file:<path>`` loads a serialised extractor archive.
* ``pretrained:<name>`` looks the archive up in the cache directory named
  by the ``FXSR_CACHE`` environment variable.

The extractor is frozen: it never trains, and gradient only flows through
its inputs.
"""

import logging
import os

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .archive import load_archive, save_archive
from .errors import ConfigError, DataError, DomainError, NumericalError, ShapeError
from .schedules import FeatureLevel, WeightSet

logger = logging.getLogger(__name__)

# Stage layouts of the VGG-19 convolutional body: (convs, width).
_STAGES = ((2, 64), (2, 128), (4, 256), (4, 512), (4, 512))

# Tap depth for each feature level: stage index (1-based).
LEVEL_STAGE = {
    FeatureLevel.VGG22: 2,
    FeatureLevel.VGG34: 3,
    FeatureLevel.VGG44: 4,
    FeatureLevel.VGG54: 5,
}

# Reference input side used for magnitude calibration.
REF_SIZE = 128

CACHE_ENV = "FXSR_CACHE"


def min_input_side(level: FeatureLevel) -> int:
    """Smallest input side that still reaches the level's tap."""
    return 2 ** (LEVEL_STAGE[level] - 1)


def _stage_widths(width_scale: float) -> tuple[tuple[int, int], ...]:
    if width_scale <= 0:
        raise ConfigError(f"width_scale must be positive, got {width_scale}")
    return tuple(
        (count, max(1, round(width * width_scale))) for count, width in _STAGES
    )


class FeatureExtractor(nn.Module):
    """Frozen VGG-19-shaped feature stack with taps at four depths.

    Args:
        widths: per-stage (conv_count, channels) layout.
        input_mean: per-channel mean subtracted from inputs.
        input_std: per-channel divisor applied after the mean.
        source: provenance label carried into checkpoints and archives.
    """

    def __init__(self, widths, input_mean=(0.5, 0.5, 0.5),
                 input_std=(0.5, 0.5, 0.5), source: str = "uninitialised"):
        super().__init__()
        self.widths = tuple((int(n), int(w)) for n, w in widths)
        self.source = source
        self.convs = nn.ModuleDict()
        self._order: list[str] = []
        in_ch = 3
        for stage, (count, width) in enumerate(self.widths, start=1):
            for i in range(1, count + 1):
                name = f"conv{stage}_{i}"
                self.convs[name] = nn.Conv2d(in_ch, width, 3, 1, 1)
                self._order.append(name)
                in_ch = width
        tap_of_stage = {s: f"conv{s}_{c}" for s, (c, _) in
                        enumerate(self.widths, start=1)}
        self._taps = {tap_of_stage[LEVEL_STAGE[l]]: l for l in FeatureLevel.ordered()}
        self.register_buffer(
            "input_mean", torch.tensor(input_mean, dtype=torch.float32).view(1, 3, 1, 1)
        )
        self.register_buffer(
            "input_std", torch.tensor(input_std, dtype=torch.float32).view(1, 3, 1, 1)
        )
        self.requires_grad_(False)
        self.eval()

    # Construction -----------------------------------------------------

    @classmethod
    def seeded(cls, seed: int = 0, width_scale: float = 1.0) -> "FeatureExtractor":
        """Deterministic random extractor, magnitude-calibrated."""
        self = cls(_stage_widths(width_scale),
                   source=f"seeded:{int(seed)}:{float(width_scale):g}")
        gen = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            for name in self._order:
                conv = self.convs[name]
                fan_in = conv.in_channels * 9
                std = (2.0 / fan_in) ** 0.5
                conv.weight.copy_(
                    torch.randn(conv.weight.shape, generator=gen) * std
                )
                # Zero bias: a bias term survives the calibration rescaling
                # as a content-independent offset that swamps the signal in
                # deep taps, collapsing distances between distinct images.
                conv.bias.zero_()
        self._calibrate(int(seed))
        return self

    @classmethod
    def from_file(cls, path) -> "FeatureExtractor":
        manifest, arrays = load_archive(path)
        if manifest.get("kind") != "feature-extractor":
            raise DataError(f"{path} is not a feature-extractor archive")
        self = cls(
            [tuple(pair) for pair in manifest["widths"]],
            input_mean=manifest["input_mean"],
            input_std=manifest["input_std"],
            source=manifest.get("source", f"file:{path}"),
        )
        with torch.no_grad():
            for name in self._order:
                for part in ("weight", "bias"):
                    key = f"{name}.{part}"
                    if key not in arrays:
                        raise DataError(f"{path}: missing array {key!r}")
                    tensor = getattr(self.convs[name], part)
                    src = torch.from_numpy(arrays[key])
                    if src.shape != tensor.shape:
                        raise DataError(
                            f"{path}: array {key!r} has shape {tuple(src.shape)}, "
                            f"expected {tuple(tensor.shape)}"
                        )
                    tensor.copy_(src)
        return self

    @classmethod
    def from_source(cls, source: str) -> "FeatureExtractor":
        """Build from a source string: seeded:, file:, or pretrained:."""
        kind, _, rest = str(source).partition(":")
        if kind == "seeded":
            parts = rest.split(":") if rest else ["0"]
            seed = int(parts[0] or 0)
            scale = float(parts[1]) if len(parts) > 1 and parts[1] else 1.0
            return cls.seeded(seed, scale)
        if kind == "file":
            return cls.from_file(rest)
        if kind == "pretrained":
            return cls.from_pretrained(rest or "vgg19")
        raise ConfigError(
            f"unknown feature source {source!r}; expected seeded:<seed>[:scale], "
            "file:<path>, or pretrained:<name>"
        )

    @classmethod
    def from_pretrained(cls, name: str = "vgg19") -> "FeatureExtractor":
        cache = os.environ.get(CACHE_ENV, os.path.expanduser("~/.cache/fxsr"))
        path = os.path.join(cache, f"{name}.fxw")
        if not os.path.exists(path):
            raise DataError(
                f"no cached weights for {name!r}: expected {path}. Set {CACHE_ENV} "
                "to the directory holding the archive, or use a seeded extractor."
            )
        return cls.from_file(path)

    def save_weights(self, path) -> None:
        manifest = {
            "kind": "feature-extractor",
            "source": self.source,
            "widths": [list(pair) for pair in self.widths],
            "input_mean": [float(v) for v in self.input_mean.flatten()],
            "input_std": [float(v) for v in self.input_std.flatten()],
        }
        arrays = {}
        for name in self._order:
            conv = self.convs[name]
            arrays[f"{name}.weight"] = conv.weight.detach().cpu().numpy()
            arrays[f"{name}.bias"] = conv.bias.detach().cpu().numpy()
        save_archive(path, manifest, arrays)

    # Calibration -------------------------------------------------------

    @torch.no_grad()
    def _calibrate(self, seed: int) -> None:
        """Rescale each conv so tap norms are O(1) at the reference size.

        Per-entry rms after each activation is driven to 1/sqrt(N) where N
        is that tensor's entry count per image at REF_SIZE input. Scaling a
        conv's weight and bias scales its post-ReLU output linearly, so the
        correction is exact on the reference batch. The reference content is
        low-frequency-dominated with a small noise floor; calibrating on
        white noise instead would leave responses to smooth natural content
        orders of magnitude below the intended scale.
        """
        gen = torch.Generator().manual_seed(int(seed) + 101)
        coarse = torch.rand((2, 3, 16, 16), generator=gen)
        ref = F.interpolate(coarse, size=(REF_SIZE, REF_SIZE), mode="bilinear",
                            align_corners=False)
        ref = (ref + 0.1 * (torch.rand(ref.shape, generator=gen) - 0.5)).clamp(0, 1)
        x = (ref - self.input_mean) / self.input_std
        stage = 1
        for name in self._order:
            layer_stage = int(name[4])
            if layer_stage != stage:
                x = F.max_pool2d(x, 2)
                stage = layer_stage
            conv = self.convs[name]
            x = F.relu(conv(x))
            n_entries = x.shape[1] * x.shape[2] * x.shape[3]
            rms = float(x.pow(2).mean().sqrt())
            if rms < 1e-30:
                raise NumericalError(f"calibration produced a dead layer at {name}")
            scale = (1.0 / n_entries**0.5) / rms
            conv.weight.mul_(scale)
            conv.bias.mul_(scale)
            x = x * scale

    # Inference ---------------------------------------------------------

    def features(self, images: torch.Tensor, levels=None) -> dict:
        """Tap activations for a batch of RGB images.

        Args:
            images: (B, 3, H, W) tensor; values are normalised internally.
            levels: iterable of FeatureLevel; defaults to all four.

        Returns:
            dict mapping each requested level to its (B, C, h, w) features,
            where h = H / 2**(stage-1).
        """
        if levels is None:
            levels = FeatureLevel.ordered()
        levels = tuple(levels)
        if not levels:
            return {}
        for level in levels:
            if level not in LEVEL_STAGE:
                raise DomainError(f"unknown feature level {level!r}")
        if images.dim() != 4 or images.shape[1] != 3:
            raise ShapeError(
                f"expected (B, 3, H, W) input, got shape {tuple(images.shape)}"
            )
        deepest = max(LEVEL_STAGE[l] for l in levels)
        side = min(images.shape[2], images.shape[3])
        need = 2 ** (deepest - 1)
        if side < need:
            worst = max(levels, key=lambda l: LEVEL_STAGE[l])
            raise DomainError(
                f"input side {side} is too small for level {worst.name}; "
                f"needs at least {need} pixels"
            )
        wanted = {name for name, level in self._taps.items() if level in levels}
        x = (images - self.input_mean.to(images.dtype)) / self.input_std.to(images.dtype)
        out = {}
        stage = 1
        for name in self._order:
            layer_stage = int(name[4])
            if layer_stage > deepest:
                break
            if layer_stage != stage:
                x = F.max_pool2d(x, 2)
                stage = layer_stage
            x = F.relu(self.convs[name](x))
            if name in wanted:
                out[self._taps[name]] = x
        return out

    def forward(self, images: torch.Tensor) -> dict:
        return self.features(images)


def feature_distance(feat_a: torch.Tensor, feat_b: torch.Tensor) -> torch.Tensor:
    """Per-image L2 norm of the feature difference, averaged over the batch."""
    if feat_a.shape != feat_b.shape:
        raise ShapeError(
            f"feature shapes differ: {tuple(feat_a.shape)} vs {tuple(feat_b.shape)}"
        )
    if feat_a.dim() < 2:
        raise ShapeError("expected batched feature tensors")
    diff = (feat_a - feat_b).flatten(1)
    return diff.norm(dim=1).mean()


def perceptual_terms(sr: torch.Tensor, hr: torch.Tensor, levels,
                     extractor: FeatureExtractor) -> dict:
    """Feature distance at each requested level, keyed by level."""
    levels = tuple(levels)
    if not levels:
        return {}
    feats_sr = extractor.features(sr, levels)
    feats_hr = extractor.features(hr, levels)
    return {
        level: feature_distance(feats_sr[level], feats_hr[level])
        for level in levels
    }


def conditional_perceptual_loss(sr: torch.Tensor, hr: torch.Tensor,
                                weights: WeightSet,
                                extractor: FeatureExtractor) -> torch.Tensor:
    """Weighted sum of feature distances over the active levels.

    Levels with zero weight are never evaluated; with no active level the
    loss is exactly zero and the extractor is not touched.
    """
    active = weights.active_levels()
    if not active:
        return sr.new_zeros(())
    terms = perceptual_terms(sr, hr, active, extractor)
    total = sr.new_zeros(())
    for level in active:
        total = total + weights.w_per[level] * terms[level]
    return total
