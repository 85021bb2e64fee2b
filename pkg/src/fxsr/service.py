"""HTTP inference service.

Checkpoints are loaded once at startup from a directory and are immutable
while serving; request handling is stateless. Forward passes run under a
lock so concurrent requests on a small host stay deterministic and memory
stays bounded; everything else about a request is private to it.

The style map travels as an encoded 8-bit grayscale raster, so map values
are quantized to 1/255 on the wire. That matches what the CLI accepts and
what a painting front end can produce without a custom float format.
"""

import io
import logging
import os
import threading
import time
import zipfile

import numpy as np
from fastapi import FastAPI, File, Form, UploadFile
from fastapi.responses import JSONResponse, Response
from PIL import Image

from .errors import DataError, DomainError, FxsrError, ShapeError
from .generator import StyleMap
from .imgio import to_pil
from .inference import LoadedModel, load_model, parse_ts, super_resolve

logger = logging.getLogger(__name__)

_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def load_models(models_dir) -> dict[str, LoadedModel]:
    models_dir = os.fspath(models_dir)
    if not os.path.isdir(models_dir):
        raise DataError(f"models directory not found: {models_dir}")
    models = {}
    for name in sorted(os.listdir(models_dir)):
        if not name.endswith(".fxc"):
            continue
        model = load_model(os.path.join(models_dir, name))
        models[model.model_id] = model
    return models


def _decode_rgb(payload: bytes, label: str) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(payload)) as img:
            return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except Exception as exc:
        raise DataError(f"cannot decode {label} payload: {exc}") from exc


def _decode_map(payload: bytes, lr_shape: tuple[int, int]) -> StyleMap:
    try:
        with Image.open(io.BytesIO(payload)) as img:
            if img.mode != "L":
                raise DataError(
                    f"style maps must be 8-bit single-channel (mode L), "
                    f"got mode {img.mode}"
                )
            raw = np.asarray(img, dtype=np.float32)
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"cannot decode map payload: {exc}") from exc
    if raw.shape != tuple(lr_shape):
        raise ShapeError(
            f"style map is {raw.shape[1]}x{raw.shape[0]} but the input is "
            f"{lr_shape[1]}x{lr_shape[0]}"
        )
    return StyleMap(raw / 255.0)


def _encode_png(sr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    to_pil(np.clip(sr, 0.0, 1.0)).save(buf, format="PNG")
    return buf.getvalue()


def create_app(models_dir) -> FastAPI:
    app = FastAPI(title="fxsr inference service")
    app.state.ready = False
    app.state.models = load_models(models_dir)
    app.state.infer_lock = threading.Lock()
    app.state.ready = True
    logger.info("serving %d model(s) from %s", len(app.state.models),
                models_dir)

    def _error(status: int, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"detail": message})

    def _resolve_model(model_id: str):
        if not app.state.ready:
            return None, _error(503, "models are still loading")
        model = app.state.models.get(model_id)
        if model is None:
            return None, _error(
                404, f"unknown model {model_id!r}; see /v1/models"
            )
        return model, None

    def _resolve_style(t: str | None, map_payload: bytes | None,
                       lr_shape: tuple[int, int]):
        if (t is None) == (map_payload is None):
            raise DataError("provide exactly one of 't' and 'map'")
        if t is not None:
            try:
                value = float(t)
            except ValueError:
                raise DataError(f"t must be a number, got {t!r}") from None
            if not 0.0 <= value <= 1.0:
                raise DomainError(f"t must lie in [0, 1], got {value}")
            return StyleMap.flat(value, lr_shape)
        return _decode_map(map_payload, lr_shape)

    @app.get("/v1/models")
    def list_models():
        return [
            {
                "id": model.model_id,
                "scale": model.scale,
                "variant": model.variant,
                "iteration": model.iteration,
            }
            for model in app.state.models.values()
        ]

    @app.post("/v1/infer")
    async def infer(lr: UploadFile = File(...),
                    model: str = Form(...),
                    t: str | None = Form(None),
                    map_file: UploadFile | None = File(None, alias="map")):
        loaded, failure = _resolve_model(model)
        if failure is not None:
            return failure
        started = time.perf_counter()
        try:
            lr_array = _decode_rgb(await lr.read(), "lr")
            map_payload = await map_file.read() if map_file is not None else None
            style = _resolve_style(t, map_payload, lr_array.shape[:2])
            with app.state.infer_lock:
                sr = super_resolve(loaded, lr_array, style)
        except FxsrError as exc:
            return _error(400, str(exc))
        body = _encode_png(sr)
        stats = style.stats()
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        return Response(content=body, media_type="image/png", headers={
            "X-Fxsr-Model": loaded.model_id,
            "X-Fxsr-Scale": str(loaded.scale),
            "X-Fxsr-Elapsed-Ms": f"{elapsed_ms:.1f}",
            "X-Fxsr-Map-Min": f"{stats['min']:.6f}",
            "X-Fxsr-Map-Max": f"{stats['max']:.6f}",
            "X-Fxsr-Map-Mean": f"{stats['mean']:.6f}",
        })

    @app.post("/v1/sweep")
    async def sweep_endpoint(lr: UploadFile = File(...),
                             model: str = Form(...),
                             ts: str | None = Form(None)):
        loaded, failure = _resolve_model(model)
        if failure is not None:
            return failure
        try:
            lr_array = _decode_rgb(await lr.read(), "lr")
            values = parse_ts(ts) if ts is not None else None
            from .inference import sweep as run_sweep

            with app.state.infer_lock:
                results = run_sweep(loaded, lr_array, values)
        except FxsrError as exc:
            return _error(400, str(exc))
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
            for t_value, sr in results:
                info = zipfile.ZipInfo(f"t_{t_value:g}.png",
                                       date_time=_ZIP_EPOCH)
                info.external_attr = 0o644 << 16
                zf.writestr(info, _encode_png(sr))
        return Response(content=buf.getvalue(), media_type="application/zip",
                        headers={
                            "X-Fxsr-Model": loaded.model_id,
                            "X-Fxsr-Count": str(len(results)),
                        })

    return app
