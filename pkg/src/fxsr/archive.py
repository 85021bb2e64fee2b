"""Array archives: a zip of .npy files plus a JSON manifest.

Used for model checkpoints and for serialised feature-extractor weights.
The manifest is stored as pretty-printed JSON under ``manifest.json`` so an
archive can be inspected with any zip tool; arrays live under ``arrays/``
named by their key.
"""

import io
import json
import os
import zipfile

import numpy as np

from .errors import CheckpointError
from .imgio import atomic_write_bytes

MANIFEST_NAME = "manifest.json"
ARRAY_PREFIX = "arrays/"


# Fixed entry timestamp: archives of identical content are byte-identical,
# which lets whole checkpoints be compared directly.
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _entry(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_archive(path, manifest: dict, arrays: dict[str, np.ndarray]) -> None:
    """Serialise manifest and arrays into a single zip file, atomically."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _entry(
            zf,
            MANIFEST_NAME,
            (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"),
        )
        for key in sorted(arrays):
            arr = np.asarray(arrays[key])
            if arr.ndim and not arr.flags.c_contiguous:
                arr = np.ascontiguousarray(arr)
            arr_buf = io.BytesIO()
            np.save(arr_buf, arr)
            _entry(zf, ARRAY_PREFIX + key + ".npy", arr_buf.getvalue())
    atomic_write_bytes(path, buf.getvalue())


def load_archive(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read back a (manifest, arrays) pair written by save_archive."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise CheckpointError(f"archive not found: {path}")
    try:
        with zipfile.ZipFile(path, "r") as zf:
            names = set(zf.namelist())
            if MANIFEST_NAME not in names:
                raise CheckpointError(f"{path}: missing {MANIFEST_NAME}")
            manifest = json.loads(zf.read(MANIFEST_NAME).decode("utf-8"))
            arrays = {}
            for name in sorted(names):
                if not name.startswith(ARRAY_PREFIX) or not name.endswith(".npy"):
                    continue
                key = name[len(ARRAY_PREFIX):-len(".npy")]
                arrays[key] = np.load(io.BytesIO(zf.read(name)), allow_pickle=False)
    except zipfile.BadZipFile as exc:
        raise CheckpointError(f"{path} is not a valid archive: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: malformed manifest: {exc}") from exc
    return manifest, arrays
