"""Image and file IO helpers.

All raster IO goes through Pillow. In-memory images are float32 arrays in
[0, 1], HxWxC with C = 3 for colour and plain HxW for single-channel maps.
Writes are atomic: content goes to a temporary sibling file first and is
renamed into place, so a crash never leaves a truncated output behind.
"""

import io
import os
import tempfile

import numpy as np
from PIL import Image

from .errors import DataError, DomainError, ShapeError

__all__ = [
    "load_rgb",
    "load_gray",
    "quantize_u8",
    "to_pil",
    "save_image",
    "save_gray",
    "jpeg_roundtrip",
    "atomic_write_bytes",
]


def load_rgb(path) -> np.ndarray:
    """Load an image file as float32 RGB in [0, 1]."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
    except FileNotFoundError:
        raise DataError(f"image not found: {path}") from None
    except Exception as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return arr


def load_gray(path) -> np.ndarray:
    """Load a single-channel image as float32 HxW in [0, 1].

    The file must already be single-channel; colour inputs are rejected
    rather than silently collapsed.
    """
    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "I;16", "1"):
                raise DataError(
                    f"{path}: expected a single-channel image, got mode {img.mode!r}"
                )
            arr = np.asarray(img.convert("L"), dtype=np.float32) / 255.0
    except FileNotFoundError:
        raise DataError(f"map image not found: {path}") from None
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return arr


def quantize_u8(arr: np.ndarray) -> np.ndarray:
    """Clip to [0, 1] and quantize to uint8, rounding half away from zero."""
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError("cannot quantize non-finite values")
    clipped = np.clip(arr, 0.0, 1.0)
    return np.floor(clipped * 255.0 + 0.5).astype(np.uint8)


def to_pil(arr: np.ndarray) -> Image.Image:
    """Quantize a float image to a PIL image (RGB or grayscale)."""
    u8 = quantize_u8(arr)
    if u8.ndim == 2:
        return Image.fromarray(u8, mode="L")
    if u8.ndim == 3 and u8.shape[2] == 3:
        return Image.fromarray(u8, mode="RGB")
    raise ShapeError(f"expected HxW or HxWx3, got shape {arr.shape}")


def _encode(img: Image.Image, suffix: str) -> bytes:
    fmt = {".png": "PNG", ".jpg": "JPEG", ".jpeg": "JPEG", ".bmp": "BMP",
           ".pgm": "PPM", ".ppm": "PPM"}.get(suffix.lower())
    if fmt is None:
        raise DataError(f"unsupported image suffix {suffix!r}")
    buf = io.BytesIO()
    img.save(buf, format=fmt)
    return buf.getvalue()


def save_image(path, arr: np.ndarray) -> None:
    """Quantize and atomically write a float RGB image."""
    path = os.fspath(path)
    atomic_write_bytes(path, _encode(to_pil(arr), os.path.splitext(path)[1]))


def save_gray(path, arr: np.ndarray) -> None:
    """Quantize and atomically write a float HxW map as 8-bit grayscale."""
    if arr.ndim != 2:
        raise ShapeError(f"expected an HxW array, got shape {arr.shape}")
    path = os.fspath(path)
    atomic_write_bytes(path, _encode(to_pil(arr), os.path.splitext(path)[1]))


def jpeg_roundtrip(arr: np.ndarray, quality: int) -> np.ndarray:
    """Encode to JPEG at the given quality and decode back to float32."""
    if not 1 <= int(quality) <= 100:
        raise DomainError(f"JPEG quality must be in [1, 100], got {quality}")
    buf = io.BytesIO()
    to_pil(arr).save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    with Image.open(buf) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0


def atomic_write_bytes(path, data: bytes) -> None:
    """Write bytes to path via a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
