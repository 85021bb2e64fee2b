"""Separable bicubic resampling on float arrays.

One resampler is used everywhere a fixed, reproducible kernel matters:
synthesising low-resolution training inputs, the low-frequency consistency
metric, and the map-resizing utility. Keeping it in-repo avoids depending
on the exact convention of any one image library.

Kernel: Catmull-Rom bicubic (a = -0.5). When downscaling, the kernel is
stretched by the scale factor so it acts as an antialiasing low-pass,
matching the convention of high-quality image resizers. Edges are handled
by clamping sample positions to the array, and each output pixel's weights
are normalised to sum to one, so constant images are preserved exactly.
"""

import numpy as np

from .errors import DomainError, ShapeError

_A = -0.5


def _kernel(x: np.ndarray) -> np.ndarray:
    x = np.abs(x)
    x2 = x * x
    x3 = x2 * x
    near = (_A + 2.0) * x3 - (_A + 3.0) * x2 + 1.0
    far = _A * x3 - 5.0 * _A * x2 + 8.0 * _A * x - 4.0 * _A
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def _axis_weights(in_len: int, out_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample indices and normalised weights for one axis.

    Returns (idx, w) with shapes (out_len, taps); idx is clamped to the
    valid range so the border replicates.
    """
    if in_len <= 0 or out_len <= 0:
        raise DomainError(f"axis lengths must be positive, got {in_len}->{out_len}")
    scale = in_len / out_len
    support = 2.0 * max(scale, 1.0)
    centers = (np.arange(out_len, dtype=np.float64) + 0.5) * scale - 0.5
    left = np.floor(centers - support).astype(np.int64) + 1
    taps = int(np.ceil(2.0 * support)) + 1
    offsets = np.arange(taps, dtype=np.int64)
    idx = left[:, None] + offsets[None, :]
    dist = centers[:, None] - idx.astype(np.float64)
    if scale > 1.0:
        w = _kernel(dist / scale)
    else:
        w = _kernel(dist)
    w = w / np.sum(w, axis=1, keepdims=True)
    idx = np.clip(idx, 0, in_len - 1)
    return idx, w


def resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize an HxW or HxWxC array to (out_h, out_w) in float64.

    Output values are not clipped; ringing past the input range is the
    caller's concern.
    """
    if image.ndim not in (2, 3):
        raise ShapeError(f"expected a 2-D or 3-D array, got shape {image.shape}")
    if image.shape[0] <= 0 or image.shape[1] <= 0:
        raise ShapeError(f"empty input image: shape {image.shape}")
    arr = np.asarray(image, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]

    idx_w, w_w = _axis_weights(arr.shape[1], out_w)
    arr = _resample_axis(arr, idx_w, w_w, axis=1)
    idx_h, w_h = _axis_weights(arr.shape[0], out_h)
    arr = _resample_axis(arr, idx_h, w_h, axis=0)

    if squeeze:
        arr = arr[:, :, 0]
    return arr


def _resample_axis(arr: np.ndarray, idx: np.ndarray, w: np.ndarray, axis: int) -> np.ndarray:
    # Gather (out, taps) samples along the axis and contract against weights.
    taken = np.take(arr, idx, axis=axis)
    if axis == 0:
        return np.einsum("otwc,ot->owc", taken, w)
    return np.einsum("hotc,ot->hoc", taken, w)


def downscale(image: np.ndarray, factor: int) -> np.ndarray:
    """Antialiased downscale by an integer factor; dims must divide."""
    if factor < 1:
        raise DomainError(f"scale factor must be >= 1, got {factor}")
    h, w = image.shape[0], image.shape[1]
    if h % factor or w % factor:
        raise ShapeError(
            f"image {h}x{w} is not divisible by the scale factor {factor}"
        )
    return resize(image, h // factor, w // factor)


def upscale(image: np.ndarray, factor: int) -> np.ndarray:
    """Bicubic upscale by an integer factor."""
    if factor < 1:
        raise DomainError(f"scale factor must be >= 1, got {factor}")
    return resize(image, image.shape[0] * factor, image.shape[1] * factor)
