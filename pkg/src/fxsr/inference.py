"""Checkpoint loading and map-conditioned inference.

The style input can be a scalar, an in-memory array, or an 8-bit grayscale
image on disk. Maps are never resized implicitly: a map whose size differs
from the input is an error, because silently rescaling a control signal a
user painted at pixel precision would move their edits. fxsr-resize-map
exists for the explicit case.

Inputs larger than ``tile_size`` are processed in overlapping tiles whose
seams are blended with a linear feather, so memory stays bounded while the
result remains deterministic.
"""

import os
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from . import checkpoint as checkpoint_io
from .errors import ConfigError, DataError, DomainError, ShapeError
from .generator import FlexibleGenerator, GeneratorConfig, StyleMap, generate

TILE_SIZE = 256
TILE_OVERLAP = 32
DEFAULT_TS = tuple(i / 10 for i in range(11))


@dataclass
class LoadedModel:
    """An inference-ready generator plus the run metadata it came from."""

    generator: FlexibleGenerator
    config: GeneratorConfig
    variant: str
    iteration: int
    model_id: str

    @property
    def scale(self) -> int:
        return self.config.scale


def load_model(path) -> LoadedModel:
    """Load a checkpoint for inference only."""
    generator, manifest = checkpoint_io.load_generator(path)
    run = manifest["config"]
    stem = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    return LoadedModel(
        generator=generator,
        config=generator.config,
        variant=run.get("variant", "pd"),
        iteration=int(manifest.get("iteration", 0)),
        model_id=stem,
    )


def load_style_map(path, lr_shape: tuple[int, int]) -> StyleMap:
    """Read an 8-bit grayscale map and check it against the input size.

    0 maps to t=0 and 255 to t=1. The map must match the low-resolution
    input exactly; no resampling happens here.
    """
    try:
        with Image.open(path) as img:
            if img.mode != "L":
                raise DataError(
                    f"{path}: style maps must be 8-bit single-channel "
                    f"(mode L), got mode {img.mode}"
                )
            raw = np.asarray(img, dtype=np.float32)
    except FileNotFoundError:
        raise DataError(f"style map not found: {path}") from None
    except (OSError, Image.UnidentifiedImageError) as exc:
        raise DataError(f"{path}: cannot read style map: {exc}") from exc
    if raw.shape != tuple(lr_shape):
        raise ShapeError(
            f"style map {path} is {raw.shape[1]}x{raw.shape[0]} but the "
            f"input is {lr_shape[1]}x{lr_shape[0]}; resize the map "
            "explicitly (fxsr-resize-map) if that is intended"
        )
    return StyleMap(raw / 255.0)


def resolve_style(source, lr_shape: tuple[int, int]) -> StyleMap:
    """Turn any accepted style source into a map matching ``lr_shape``.

    Accepts a StyleMap, a scalar in [0, 1], a float array, or a path to an
    8-bit grayscale image.
    """
    if isinstance(source, StyleMap):
        if source.shape != tuple(lr_shape):
            raise ShapeError(
                f"style map is {source.shape[1]}x{source.shape[0]} but the "
                f"input is {lr_shape[1]}x{lr_shape[0]}; resize the map "
                "explicitly (fxsr-resize-map) if that is intended"
            )
        return source
    if isinstance(source, (int, float)) and not isinstance(source, bool):
        if not 0.0 <= float(source) <= 1.0:
            raise DomainError(f"style value must lie in [0, 1], got {source}")
        return StyleMap.flat(float(source), lr_shape)
    if isinstance(source, np.ndarray):
        if source.shape != tuple(lr_shape):
            raise ShapeError(
                f"style array has shape {source.shape}, input wants "
                f"{tuple(lr_shape)}"
            )
        return StyleMap(np.asarray(source, dtype=np.float32))
    if isinstance(source, (str, os.PathLike)):
        return load_style_map(source, lr_shape)
    raise DomainError(f"unsupported style source: {type(source).__name__}")


def _feather_profile(length: int, ramp: int, before: bool, after: bool):
    """Per-axis blend weight: 1 inside, linear ramp on shared edges."""
    profile = np.ones(length, dtype=np.float64)
    if ramp > 0:
        slope = (np.arange(ramp, dtype=np.float64) + 1.0) / (ramp + 1.0)
        if before:
            profile[:ramp] = slope
        if after:
            profile[-ramp:] = slope[::-1]
    return profile


def _tile_starts(extent: int, tile: int, step: int) -> list[int]:
    starts = list(range(0, max(extent - tile, 0) + 1, step))
    if starts[-1] != extent - tile:
        starts.append(extent - tile)
    return starts


def super_resolve(model, lr: np.ndarray, style,
                  tile_size: int = TILE_SIZE,
                  tile_overlap: int = TILE_OVERLAP) -> np.ndarray:
    """Upscale ``lr`` under the given style source.

    Args:
        model: a LoadedModel or a bare generator module.
        lr: float32 HxWx3 array in [0, 1].
        style: scalar t, StyleMap, float array, or grayscale image path.
        tile_size: inputs larger than this on either side are tiled.
        tile_overlap: blended seam width, in low-resolution pixels.

    Returns the raw float32 output (not clipped); quantize with
    fxsr.imgio.quantize_u8 for export.
    """
    generator = model.generator if isinstance(model, LoadedModel) else model
    lr = np.asarray(lr, dtype=np.float32)
    if lr.ndim != 3 or lr.shape[2] != 3:
        raise ShapeError(f"expected HxWx3 input, got {lr.shape}")
    h, w = lr.shape[:2]
    style_map = resolve_style(style, (h, w))
    if h <= tile_size and w <= tile_size:
        return generate(generator, lr, style_map)

    if not 0 <= tile_overlap < tile_size:
        raise ConfigError(
            f"tile_overlap must lie in [0, tile_size), got {tile_overlap}"
        )
    scale = generator.config.scale
    step = tile_size - tile_overlap
    ys = _tile_starts(h, min(tile_size, h), step)
    xs = _tile_starts(w, min(tile_size, w), step)
    th = min(tile_size, h)
    tw = min(tile_size, w)
    acc = np.zeros((h * scale, w * scale, 3), dtype=np.float64)
    den = np.zeros((h * scale, w * scale, 1), dtype=np.float64)
    ramp = tile_overlap * scale
    for y0 in ys:
        for x0 in xs:
            patch = lr[y0:y0 + th, x0:x0 + tw]
            sub_map = StyleMap(style_map.values[y0:y0 + th, x0:x0 + tw])
            sr = generate(generator, patch, sub_map).astype(np.float64)
            wy = _feather_profile(th * scale, ramp, before=y0 > 0,
                                  after=y0 + th < h)
            wx = _feather_profile(tw * scale, ramp, before=x0 > 0,
                                  after=x0 + tw < w)
            weight = (wy[:, None] * wx[None, :])[..., None]
            oy, ox = y0 * scale, x0 * scale
            acc[oy:oy + th * scale, ox:ox + tw * scale] += sr * weight
            den[oy:oy + th * scale, ox:ox + tw * scale] += weight
    return (acc / den).astype(np.float32)


def sweep(model, lr: np.ndarray, ts=None,
          tile_size: int = TILE_SIZE,
          tile_overlap: int = TILE_OVERLAP) -> list[tuple[float, np.ndarray]]:
    """Run a flat-style sweep; returns (t, output) pairs in input order."""
    if ts is None:
        ts = DEFAULT_TS
    ts = [float(t) for t in ts]
    for t in ts:
        if not (np.isfinite(t) and 0.0 <= t <= 1.0):
            raise DomainError(f"sweep values must lie in [0, 1], got {t}")
    return [
        (t, super_resolve(model, lr, t, tile_size, tile_overlap))
        for t in ts
    ]


def parse_ts(text: str) -> list[float]:
    """Parse a sweep spec: ``start:stop:step`` or a comma list.

    ``0:1:0.1`` gives the eleven default stops. The endpoint is included
    when the range divides evenly (to within half a step).
    """
    text = text.strip()
    if not text:
        raise ConfigError("empty sweep spec")
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3:
                raise ConfigError(
                    f"sweep range must be start:stop:step, got {text!r}"
                )
            start, stop, step = parts
            if step <= 0 or stop < start:
                raise ConfigError(f"invalid sweep range {text!r}")
            count = int(np.floor((stop - start) / step + 0.5)) + 1
            values = [start + k * step for k in range(count)]
        else:
            values = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"invalid sweep spec {text!r}") from None
    if not values:
        raise ConfigError(f"invalid sweep spec {text!r}")
    values = [0.0 if abs(v) < 1e-12 else round(v, 12) for v in values]
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"sweep value {v} outside [0, 1]")
    return values
