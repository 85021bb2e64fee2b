"""Training data preparation and batch sampling.

Source images are degraded to LR with the shared bicubic resampler
(optionally followed by a JPEG round trip), cut into aligned HR/LR
sub-image pairs for fast random access, and sampled into augmented
training batches. All randomness in sampling flows through one numpy
Generator in a fixed draw order, which is what makes training runs
reproducible and resumable.
"""

import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import imgio, resample
from .errors import ConfigError, DataError, ShapeError

logger = logging.getLogger(__name__)

# Sub-image geometry in HR pixels; LR geometry is derived by the scale.
SUB_SIZE = 320
SUB_STRIDE = 160

# Training patch size in HR pixels.
PATCH_SIZE = 128


@dataclass(frozen=True)
class DegradationSpec:
    """How HR content is reduced to LR training input."""

    scale: int = 4
    kernel: str = "bicubic"
    jpeg_quality: int | None = None

    def __post_init__(self):
        if self.scale not in (4, 8):
            raise ConfigError(f"scale must be 4 or 8, got {self.scale}")
        if self.kernel != "bicubic":
            raise ConfigError(
                f"unsupported degradation kernel {self.kernel!r}; only "
                "'bicubic' is implemented"
            )
        if self.jpeg_quality is not None and not 1 <= int(self.jpeg_quality) <= 100:
            raise ConfigError(
                f"jpeg_quality must be in [1, 100] or None, got {self.jpeg_quality}"
            )

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "kernel": self.kernel,
            "jpeg_quality": self.jpeg_quality,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DegradationSpec":
        return cls(**data)


@dataclass
class PairedPatch:
    """One aligned HR/LR sub-image pair."""

    hr: np.ndarray
    lr: np.ndarray
    source_id: str
    offset: tuple[int, int]  # (y, x) of the HR crop in the source image


@dataclass
class Batch:
    """Sampled training batch in HWC layout, plus the style draw."""

    hr: np.ndarray  # (B, PATCH, PATCH, 3)
    lr: np.ndarray  # (B, PATCH/scale, PATCH/scale, 3)
    t: float


def degrade(hr_image: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Produce the LR counterpart of an HR image.

    HR dimensions must be divisible by the scale so the pair stays exactly
    aligned.
    """
    if hr_image.ndim != 3 or hr_image.shape[2] != 3:
        raise ShapeError(f"expected HxWx3 image, got shape {hr_image.shape}")
    h, w = hr_image.shape[:2]
    if h % spec.scale or w % spec.scale:
        raise ShapeError(
            f"HR size {h}x{w} is not divisible by scale {spec.scale}"
        )
    lr = resample.downscale(np.asarray(hr_image, dtype=np.float64), spec.scale)
    lr = np.clip(lr, 0.0, 1.0).astype(np.float32)
    if spec.jpeg_quality is not None:
        lr = imgio.jpeg_roundtrip(lr, spec.jpeg_quality)
    return lr


def extract_subimages(hr_image: np.ndarray, lr_image: np.ndarray,
                      spec: DegradationSpec, source_id: str) -> list[PairedPatch]:
    """Cut an aligned HR/LR pair into fixed-size sub-image pairs.

    Windows that do not fit entirely are discarded; an image smaller than
    one window yields no pairs (logged, not an error).
    """
    h, w = hr_image.shape[:2]
    if lr_image.shape[:2] != (h // spec.scale, w // spec.scale):
        raise ShapeError(
            f"LR shape {lr_image.shape[:2]} does not match HR {h}x{w} at "
            f"scale {spec.scale}"
        )
    if h < SUB_SIZE or w < SUB_SIZE:
        logger.warning(
            "%s: %dx%d is smaller than the %d-pixel sub-image window; skipped",
            source_id, h, w, SUB_SIZE,
        )
        return []
    lr_size = SUB_SIZE // spec.scale
    pairs = []
    for y in range(0, h - SUB_SIZE + 1, SUB_STRIDE):
        for x in range(0, w - SUB_SIZE + 1, SUB_STRIDE):
            ly, lx = y // spec.scale, x // spec.scale
            pairs.append(PairedPatch(
                hr=np.ascontiguousarray(hr_image[y:y + SUB_SIZE, x:x + SUB_SIZE]),
                lr=np.ascontiguousarray(lr_image[ly:ly + lr_size, lx:lx + lr_size]),
                source_id=source_id,
                offset=(y, x),
            ))
    return pairs


def prepare_subimages(hr_image: np.ndarray, spec: DegradationSpec,
                      source_id: str = "image") -> list[PairedPatch]:
    """Degrade a source image and cut it into training pairs."""
    lr = degrade(hr_image, spec)
    return extract_subimages(hr_image, lr, spec, source_id)


def sample_batch(pairs: list[PairedPatch], batch_size: int,
                 rng: np.random.Generator, spec: DegradationSpec,
                 augment: bool = True) -> Batch:
    """Draw one augmented training batch.

    The draw order per element is fixed (pair index, crop y, crop x, flip,
    rotation) followed by one style draw for the whole batch; keep it
    stable, resume reproducibility depends on it.
    """
    if not pairs:
        raise DataError("no training pairs available")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    lr_patch = PATCH_SIZE // spec.scale
    hr_out = np.empty((batch_size, PATCH_SIZE, PATCH_SIZE, 3), dtype=np.float32)
    lr_out = np.empty((batch_size, lr_patch, lr_patch, 3), dtype=np.float32)
    for i in range(batch_size):
        idx = int(rng.integers(0, len(pairs)))
        pair = pairs[idx]
        lh, lw = pair.lr.shape[:2]
        if lh < lr_patch or lw < lr_patch:
            raise DataError(
                f"pair {pair.source_id} LR {lh}x{lw} is smaller than the "
                f"{lr_patch}-pixel training crop"
            )
        ly = int(rng.integers(0, lh - lr_patch + 1))
        lx = int(rng.integers(0, lw - lr_patch + 1))
        hr = pair.hr[ly * spec.scale:(ly + lr_patch) * spec.scale,
                     lx * spec.scale:(lx + lr_patch) * spec.scale]
        lr = pair.lr[ly:ly + lr_patch, lx:lx + lr_patch]
        if augment:
            flip = bool(rng.integers(0, 2))
            rot = int(rng.integers(0, 4))
            if flip:
                hr, lr = hr[:, ::-1], lr[:, ::-1]
            if rot:
                hr, lr = np.rot90(hr, rot), np.rot90(lr, rot)
        hr_out[i] = hr
        lr_out[i] = lr
    t = float(rng.uniform(0.0, 1.0))
    return Batch(hr=hr_out, lr=lr_out, t=t)


# Materialised dataset layout -------------------------------------------

MANIFEST_NAME = "manifest.json"


def write_dataset(out_dir, pairs: list[PairedPatch], spec: DegradationSpec) -> str:
    """Write sub-image pairs and a manifest to a directory."""
    out_dir = os.fspath(out_dir)
    os.makedirs(os.path.join(out_dir, "hr"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "lr"), exist_ok=True)
    records = []
    for i, pair in enumerate(pairs):
        hr_name = f"hr/{i:06d}.png"
        lr_name = f"lr/{i:06d}.png"
        imgio.save_image(os.path.join(out_dir, hr_name), pair.hr)
        imgio.save_image(os.path.join(out_dir, lr_name), pair.lr)
        records.append({
            "hr": hr_name,
            "lr": lr_name,
            "source": pair.source_id,
            "offset": list(pair.offset),
        })
    manifest = {
        "kind": "paired-subimages",
        "degradation": spec.to_dict(),
        "sub_size": SUB_SIZE,
        "sub_stride": SUB_STRIDE,
        "pairs": records,
    }
    path = os.path.join(out_dir, MANIFEST_NAME)
    imgio.atomic_write_bytes(
        path, (json.dumps(manifest, indent=2) + "\n").encode("utf-8")
    )
    return path


def load_dataset(dataset_dir) -> tuple[list[PairedPatch], DegradationSpec]:
    """Load a materialised dataset written by write_dataset."""
    dataset_dir = os.fspath(dataset_dir)
    path = os.path.join(dataset_dir, MANIFEST_NAME)
    if not os.path.exists(path):
        raise DataError(f"no dataset manifest at {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed manifest: {exc}") from exc
    if manifest.get("kind") != "paired-subimages":
        raise DataError(f"{path}: not a paired-subimages manifest")
    spec = DegradationSpec.from_dict(manifest["degradation"])
    pairs = []
    for rec in manifest["pairs"]:
        hr = imgio.load_rgb(os.path.join(dataset_dir, rec["hr"]))
        lr = imgio.load_rgb(os.path.join(dataset_dir, rec["lr"]))
        if hr.shape[:2] != (lr.shape[0] * spec.scale, lr.shape[1] * spec.scale):
            raise DataError(
                f"{rec['hr']}: HR {hr.shape[:2]} and LR {lr.shape[:2]} "
                f"disagree with scale {spec.scale}"
            )
        pairs.append(PairedPatch(
            hr=hr, lr=lr, source_id=rec["source"], offset=tuple(rec["offset"]),
        ))
    if not pairs:
        raise DataError(f"{path}: dataset contains no pairs")
    return pairs, spec


def prepare_directory(src_dir, out_dir, spec: DegradationSpec) -> str:
    """Degrade and tile every image in a directory; returns manifest path."""
    src_dir = os.fspath(src_dir)
    if not os.path.isdir(src_dir):
        raise DataError(f"source directory not found: {src_dir}")
    names = sorted(
        n for n in os.listdir(src_dir)
        if n.lower().endswith((".png", ".jpg", ".jpeg", ".bmp"))
    )
    if not names:
        raise DataError(f"no images found in {src_dir}")
    pairs = []
    for name in names:
        hr = imgio.load_rgb(os.path.join(src_dir, name))
        h = hr.shape[0] - hr.shape[0] % spec.scale
        w = hr.shape[1] - hr.shape[1] % spec.scale
        pairs.extend(prepare_subimages(hr[:h, :w], spec, source_id=name))
    if not pairs:
        raise DataError(
            f"no {SUB_SIZE}x{SUB_SIZE} sub-images could be cut from {src_dir}"
        )
    return write_dataset(out_dir, pairs, spec)
