"""HTTP inference service consumed by the browser studio.

JSON-over-base64 API:
  GET  /api/health   -> {"status": "ok", "model_loaded": true}
  GET  /api/gallery  -> manifest entries of the bundled synthetic gallery
  POST /api/transfer -> {"result_png_b64": ..., "warped_png_b64"?: ...}
"""

from __future__ import annotations

import base64
import threading
import uuid

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import imagecore, synthfaces
from .control import PARTS, TransferRequest, transfer
from .errors import FormatError
from .trainer import TrainState


class ApiError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


def _decode_image(payload: dict, key: str, resolution: int):
    raw = payload.get(key)
    if not isinstance(raw, str):
        raise ApiError("missing_field", f"field {key!r} is required")
    try:
        data = base64.b64decode(raw, validate=True)
    except Exception:
        raise ApiError("bad_base64", f"field {key!r} is not valid base64")
    try:
        return imagecore.load_image_bytes(data, resolution)
    except FormatError as exc:
        raise ApiError("bad_image", f"field {key!r}: {exc}")


def _decode_labels(payload: dict, key: str, resolution: int):
    raw = payload.get(key)
    if not isinstance(raw, str):
        raise ApiError("missing_field", f"field {key!r} is required")
    try:
        data = base64.b64decode(raw, validate=True)
    except Exception:
        raise ApiError("bad_base64", f"field {key!r} is not valid base64")
    try:
        labels = imagecore.load_label_map_bytes(data)
    except FormatError as exc:
        raise ApiError("bad_mask", f"field {key!r}: {exc}")
    if labels.shape != (resolution, resolution):
        labels = imagecore.resize(labels, resolution, resolution, mode="nearest")
    return labels


def _parse_request(body: dict, resolution: int) -> TransferRequest:
    if not isinstance(body, dict):
        raise ApiError("bad_body", "request body must be a JSON object")
    shade = body.get("shade", 1.0)
    if not isinstance(shade, (int, float)) or isinstance(shade, bool):
        raise ApiError("bad_shade", "shade must be a number")
    if not (0.0 <= float(shade) <= 1.0):
        raise ApiError("shade_out_of_range", f"shade must lie in [0,1], got {shade}")
    mode = body.get("mode", "transfer")
    if mode not in ("transfer", "removal"):
        raise ApiError("bad_mode", f"unknown mode {mode!r}")
    second = body.get("second", "source")
    if second not in ("source", "ref2"):
        raise ApiError("bad_second", f"unknown second interpolant {second!r}")

    refs_payload = body.get("references")
    if not isinstance(refs_payload, list) or not refs_payload:
        raise ApiError("missing_reference", "at least one reference is required")
    if len(refs_payload) > 3:
        raise ApiError("too_many_references", "at most 3 references are supported")
    references = []
    for i, ref in enumerate(refs_payload):
        if not isinstance(ref, dict):
            raise ApiError("bad_reference", f"reference {i} must be an object")
        references.append((_decode_image(ref, "image_png_b64", resolution),
                           _decode_labels(ref, "mask_png_b64", resolution)))

    parts_payload = body.get("parts", {p: 0 for p in PARTS})
    if not isinstance(parts_payload, dict) or not parts_payload:
        raise ApiError("bad_parts", "parts must be a non-empty object")
    parts = {}
    for part, idx in parts_payload.items():
        if part not in PARTS:
            raise ApiError("unknown_part", f"unknown part {part!r}")
        if not isinstance(idx, int) or isinstance(idx, bool) or not (0 <= idx < len(references)):
            raise ApiError("bad_part_index", f"part {part!r} references missing slot {idx}")
        parts[part] = idx
    if second == "ref2" and len(references) < 2:
        raise ApiError("missing_reference", "second='ref2' requires two references")

    return TransferRequest(
        source_image=_decode_image(body, "source_png_b64", resolution),
        source_labels=_decode_labels(body, "source_mask_png_b64", resolution),
        references=references,
        parts=parts,
        shade=float(shade),
        second=second,
        mode=mode,
        return_intermediates=bool(body.get("return_warped", True)),
    )


def create_app(state: TrainState, gallery: synthfaces.Manifest | None = None) -> FastAPI:
    app = FastAPI(title="makeup transfer service")
    lock = threading.Lock()  # at most one generator pass in flight
    resolution = state.config.resolution

    @app.get("/api/health")
    def health():
        return {"status": "ok", "model_loaded": True}

    @app.get("/api/gallery")
    def gallery_endpoint():
        if gallery is None:
            return {"entries": []}
        return {"entries": [
            {"id": e.sample_id, "domain": e.domain, "image_path": e.image_path,
             "mask_path": e.mask_path, "seed": e.seed}
            for e in gallery.entries
        ]}

    @app.post("/api/transfer")
    async def transfer_endpoint(request: Request):
        try:
            body = await request.json()
        except Exception:
            return JSONResponse(status_code=400, content={"error": "bad_json",
                                                          "message": "body is not valid JSON"})
        try:
            req = _parse_request(body, resolution)
        except ApiError as exc:
            return JSONResponse(status_code=400,
                                content={"error": exc.code, "message": exc.message})
        try:
            with lock:
                result = transfer(req, state)
        except ValueError as exc:
            return JSONResponse(status_code=400,
                                content={"error": "invalid_request", "message": str(exc)})
        except Exception:
            incident = uuid.uuid4().hex
            return JSONResponse(status_code=500,
                                content={"error": "internal", "incident": incident})
        payload = {"result_png_b64":
                   base64.b64encode(imagecore.image_png_bytes(result.output)).decode("ascii")}
        if result.warped_image is not None:
            payload["warped_png_b64"] = base64.b64encode(
                imagecore.image_png_bytes(result.warped_image)).decode("ascii")
        return payload

    return app


def serve(ckpt_path: str, host: str = "127.0.0.1", port: int = 8000,
          gallery_dir: str | None = None) -> None:
    import os

    import uvicorn

    from .trainer import load_checkpoint

    state = load_checkpoint(ckpt_path)
    gallery = None
    if gallery_dir is not None:
        gallery = synthfaces.Manifest.read(os.path.join(gallery_dir, "manifest.tsv"))
    uvicorn.run(create_app(state, gallery), host=host, port=port)
