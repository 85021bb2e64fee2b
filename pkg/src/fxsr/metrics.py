"""Fidelity and perceptual evaluation.

PSNR is computed on RGB in [0, 1]; SSIM on the ITU-R 601 luma channel.
The perceptual distance is a per-pixel feature-difference field from the
package's frozen extractor (unit-normalized channels, uniform channel
weights unless a learned-weight file is supplied), so absolute values are
only comparable under the same extractor; relative comparisons are the
point.

The flexibility score follows from evaluating a family of outputs for one
input (by convention the eleven-step style sweep) against the reference:
the best single style for the whole image versus the per-pixel best over
the family. The gap, as a percentage, is what a spatially varying map can
buy over the best flat one.
"""

import json
import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import DomainError, ShapeError
from .imgio import atomic_write_bytes
from .inference import DEFAULT_TS, super_resolve
from .perceptual import FeatureExtractor
from .resample import downscale
from .schedules import FeatureLevel

_LUMA = (0.299, 0.587, 0.114)  # ITU-R 601
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03

REPORT_COLUMNS = ("dataset", "t", "psnr", "ssim", "lr_psnr", "perceptual",
                  "g_best", "l_best", "score")


def _check_same_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def to_luma(rgb: np.ndarray) -> np.ndarray:
    """Collapse HxWx3 to the 601 luma channel."""
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeError(f"expected HxWx3, got {rgb.shape}")
    arr = np.asarray(rgb, dtype=np.float64)
    return arr[..., 0] * _LUMA[0] + arr[..., 1] * _LUMA[1] + arr[..., 2] * _LUMA[2]


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB over [0, 1] data, capped at 100."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_dims(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return 100.0
    return min(100.0, 10.0 * math.log10(1.0 / mse))


def _gaussian_kernel1d(size: int, sigma: float) -> np.ndarray:
    radius = size // 2
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    return kernel / kernel.sum()


def _filter_valid(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # Separable correlation keeping only fully covered windows.
    k = len(kernel)
    rows = x.shape[0] - k + 1
    cols = x.shape[1] - k + 1
    out = np.zeros((rows, x.shape[1]), dtype=np.float64)
    for i in range(k):
        out += kernel[i] * x[i:i + rows, :]
    final = np.zeros((rows, cols), dtype=np.float64)
    for j in range(k):
        final += kernel[j] * out[:, j:j + cols]
    return final


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity on luma, 11x11 Gaussian window."""
    _check_same_dims(np.asarray(a), np.asarray(b))
    ya = to_luma(a) if np.asarray(a).ndim == 3 else np.asarray(a, np.float64)
    yb = to_luma(b) if np.asarray(b).ndim == 3 else np.asarray(b, np.float64)
    if min(ya.shape) < _SSIM_WINDOW:
        raise ShapeError(
            f"image sides must be at least {_SSIM_WINDOW}, got {ya.shape}"
        )
    kernel = _gaussian_kernel1d(_SSIM_WINDOW, _SSIM_SIGMA)
    mu_a = _filter_valid(ya, kernel)
    mu_b = _filter_valid(yb, kernel)
    var_a = _filter_valid(ya * ya, kernel) - mu_a * mu_a
    var_b = _filter_valid(yb * yb, kernel) - mu_b * mu_b
    cov = _filter_valid(ya * yb, kernel) - mu_a * mu_b
    c1 = _SSIM_K1 ** 2
    c2 = _SSIM_K2 ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def lr_psnr(sr: np.ndarray, lr: np.ndarray, scale: int) -> float:
    """Consistency with the input: PSNR between downscaled SR and LR.

    The SR image is clipped to [0, 1] first, matching what export would
    produce, then reduced with the same antialiased resampler the data
    pipeline uses.
    """
    sr = np.asarray(sr, dtype=np.float64)
    lr = np.asarray(lr, dtype=np.float64)
    if sr.shape[0] != lr.shape[0] * scale or sr.shape[1] != lr.shape[1] * scale:
        raise ShapeError(
            f"sr {sr.shape} is not {scale}x the size of lr {lr.shape}"
        )
    reduced = downscale(np.clip(sr, 0.0, 1.0), scale)
    return psnr(reduced, lr)


def _to_batch(image: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(
        np.ascontiguousarray(np.asarray(image, np.float32).transpose(2, 0, 1))
    ).unsqueeze(0)


def perceptual_map(a: np.ndarray, b: np.ndarray,
                   extractor: FeatureExtractor,
                   levels: tuple[FeatureLevel, ...] | None = None,
                   channel_weights: dict | None = None) -> np.ndarray:
    """Per-pixel perceptual distance field between two images.

    Feature vectors are unit-normalized across channels at every position,
    squared differences are averaged over channels (or combined with the
    supplied per-channel weights), upsampled back to image size, and
    averaged across levels. Symmetric in (a, b) by construction.
    """
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    _check_same_dims(a, b)
    if levels is None:
        levels = FeatureLevel.ordered()
    h, w = a.shape[:2]
    with torch.no_grad():
        feats_a = extractor.features(_to_batch(a), levels)
        feats_b = extractor.features(_to_batch(b), levels)
        total = torch.zeros((h, w), dtype=torch.float64)
        for level in levels:
            fa = feats_a[level].double()
            fb = feats_b[level].double()
            na = fa / torch.sqrt((fa * fa).sum(dim=1, keepdim=True) + 1e-10)
            nb = fb / torch.sqrt((fb * fb).sum(dim=1, keepdim=True) + 1e-10)
            diff = (na - nb) ** 2
            if channel_weights is not None and level in channel_weights:
                weight = torch.as_tensor(
                    channel_weights[level], dtype=torch.float64
                ).view(1, -1, 1, 1)
                field = (diff * weight).sum(dim=1, keepdim=True)
            else:
                field = diff.mean(dim=1, keepdim=True)
            field = torch.nn.functional.interpolate(
                field, size=(h, w), mode="bilinear", align_corners=False
            )
            total += field[0, 0]
    return (total / len(levels)).numpy()


def perceptual_score(a: np.ndarray, b: np.ndarray,
                     extractor: FeatureExtractor,
                     levels: tuple[FeatureLevel, ...] | None = None) -> float:
    """Spatial mean of the perceptual map."""
    return float(perceptual_map(a, b, extractor, levels).mean())


@dataclass(frozen=True)
class DiversityReport:
    """How much a family of outputs for one input spans, versus its best member.

    g_best is the best whole-image average distance achieved by any single
    member; l_best lets every pixel pick its own best member. The score is
    the relative gap in percent: the headroom a spatially varying style
    map has over the best flat one.
    """

    mean_perceptual: float
    g_best: float
    l_best: float
    score: float


def diversity_score(g_best: float, l_best: float) -> float:
    """Relative gap between whole-image best and per-pixel best, percent."""
    if not (math.isfinite(g_best) and math.isfinite(l_best)):
        raise DomainError("diversity inputs must be finite")
    if g_best < 0 or l_best < 0:
        raise DomainError("diversity inputs must be non-negative")
    if l_best > g_best:
        raise DomainError(
            f"l_best {l_best} exceeds g_best {g_best}; per-pixel minima "
            "cannot be worse than the best whole image"
        )
    if g_best == l_best:
        return 0.0
    return (g_best - l_best) / g_best * 100.0


def diversity_from_maps(maps) -> DiversityReport:
    """Aggregate per-member distance maps into a DiversityReport."""
    stack = np.stack([np.asarray(m, dtype=np.float64) for m in maps])
    if stack.ndim != 3:
        raise ShapeError(f"expected a stack of 2-D maps, got {stack.shape}")
    means = stack.reshape(stack.shape[0], -1).mean(axis=1)
    g_best = float(means.min())
    l_best = float(stack.min(axis=0).mean())
    return DiversityReport(
        mean_perceptual=float(means.mean()),
        g_best=g_best,
        l_best=l_best,
        score=diversity_score(g_best, l_best),
    )


def diversity(samples, hr: np.ndarray, extractor: FeatureExtractor,
              expected_count: int = 11) -> DiversityReport:
    """Evaluate a family of outputs for one input against the reference.

    ``samples`` is conventionally the eleven-step style sweep for a single
    LR image; pass ``expected_count`` to evaluate other family sizes.
    """
    samples = list(samples)
    if len(samples) != expected_count:
        raise DomainError(
            f"expected {expected_count} samples, got {len(samples)}"
        )
    for sample in samples:
        _check_same_dims(np.asarray(sample), np.asarray(hr))
    maps = [perceptual_map(s, hr, extractor) for s in samples]
    return diversity_from_maps(maps)


@dataclass(frozen=True)
class PDPoint:
    """One style setting's position on the distortion/perception plane."""

    t: float
    distortion: float
    perception: float


def pd_curve(model, pairs, extractor: FeatureExtractor,
             ts=None) -> list[PDPoint]:
    """Trace mean PSNR and mean perceptual distance across flat styles."""
    if ts is None:
        ts = DEFAULT_TS
    pairs = [_as_pair(p) for p in pairs]
    if not pairs:
        raise DomainError("empty evaluation set")
    points = []
    for t in ts:
        psnrs = []
        scores = []
        for lr, hr in pairs:
            sr = np.clip(super_resolve(model, lr, float(t)), 0.0, 1.0)
            psnrs.append(psnr(sr, hr))
            scores.append(perceptual_score(sr, hr, extractor))
        points.append(PDPoint(t=float(t),
                              distortion=float(np.mean(psnrs)),
                              perception=float(np.mean(scores))))
    return points


def _as_pair(item) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(item, "lr") and hasattr(item, "hr"):
        return item.lr, item.hr
    lr, hr = item
    return np.asarray(lr), np.asarray(hr)


def evaluate_dataset(model, pairs, extractor: FeatureExtractor,
                     ts=None, dataset_name: str = "dataset",
                     with_diversity: bool = True) -> list[dict]:
    """Full evaluation table over a dataset: one row per style value.

    Per-image metrics are averaged across the dataset at each t. The
    family-gap columns (g_best, l_best, score) are computed per image from
    all evaluated styles, averaged across images, and repeated on every
    row, since they describe the whole sweep rather than one t.
    """
    if ts is None:
        ts = DEFAULT_TS
    ts = [float(t) for t in ts]
    pairs = [_as_pair(p) for p in pairs]
    if not pairs:
        raise DomainError("empty evaluation set")
    scale = model.scale if hasattr(model, "scale") else model.config.scale

    per_t = {t: {"psnr": [], "ssim": [], "lr_psnr": [], "perceptual": []}
             for t in ts}
    reports = []
    for lr, hr in pairs:
        maps = []
        for t in ts:
            sr = np.clip(super_resolve(model, lr, t), 0.0, 1.0)
            field = perceptual_map(sr, hr, extractor)
            maps.append(field)
            per_t[t]["psnr"].append(psnr(sr, hr))
            per_t[t]["ssim"].append(ssim(sr, hr))
            per_t[t]["lr_psnr"].append(lr_psnr(sr, lr, scale))
            per_t[t]["perceptual"].append(float(field.mean()))
        if with_diversity:
            reports.append(diversity_from_maps(maps))

    if reports:
        g_best = float(np.mean([r.g_best for r in reports]))
        l_best = float(np.mean([r.l_best for r in reports]))
        score = float(np.mean([r.score for r in reports]))
    else:
        g_best = l_best = score = float("nan")

    rows = []
    for t in ts:
        rows.append({
            "dataset": dataset_name,
            "t": t,
            "psnr": float(np.mean(per_t[t]["psnr"])),
            "ssim": float(np.mean(per_t[t]["ssim"])),
            "lr_psnr": float(np.mean(per_t[t]["lr_psnr"])),
            "perceptual": float(np.mean(per_t[t]["perceptual"])),
            "g_best": g_best,
            "l_best": l_best,
            "score": score,
        })
    return rows


def write_records(path, rows) -> None:
    """Line-delimited records, one JSON object per row, written atomically."""
    payload = "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows)
    atomic_write_bytes(path, payload.encode("utf-8"))


def format_table(rows) -> str:
    """Tab-separated summary with a fixed column order."""
    lines = ["\t".join(REPORT_COLUMNS)]
    for row in rows:
        cells = []
        for col in REPORT_COLUMNS:
            value = row.get(col)
            if isinstance(value, float):
                cells.append(f"{value:.6g}")
            else:
                cells.append(str(value))
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def write_table(path, rows) -> None:
    atomic_write_bytes(path, format_table(rows).encode("utf-8"))
