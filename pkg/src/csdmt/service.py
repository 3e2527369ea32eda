"""HTTP inference service and the operation dispatch shared with the CLI.

The CLI and the HTTP endpoints call the same ``run_operation`` and the same
PNG encoder, so both interfaces produce byte-identical outputs.
"""

import base64
import io
import time

import numpy as np
import torch
from PIL import Image as PILImage

from . import control
from .errors import DataError
from .facedata import FaceSample, make_sample
from .networks import models_from_checkpoint
from .trainer import MakeupPipeline

API_VERSION = "csdmt-api-v1"
MAX_IMAGE_BYTES = 4 * 1024 * 1024

OPERATIONS = ("transfer", "removal", "interp-global", "interp-local",
              "skin", "partial", "edit")


def encode_png(img) -> bytes:
    """Deterministic PNG encoding of a float image in [0, 1]."""
    if isinstance(img, torch.Tensor):
        img = img.detach().cpu().numpy()
    arr = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    img = PILImage.open(io.BytesIO(data)).convert("RGB")
    return np.asarray(img, dtype=np.float32) / 255.0


def decode_parsing_png(data: bytes) -> np.ndarray:
    img = PILImage.open(io.BytesIO(data))
    if img.mode not in ("P", "L"):
        img = img.convert("L")
    return np.asarray(img).astype(np.uint8)


def run_operation(op, pipeline, source: FaceSample, references, beta=None, region=None):
    """Dispatch one control operation. ``references`` carries 1-3 samples;
    ``edit`` expects the edited reference as the single entry."""
    if op not in OPERATIONS:
        raise DataError(f"unknown operation {op!r}")
    if not references:
        raise DataError("at least one reference is required")
    if op == "transfer":
        return control.transfer(source, references[0], pipeline)
    if op == "removal":
        return control.removal(source, references[0], pipeline)
    if op == "interp-global":
        y1 = references[0]
        y2 = references[1] if len(references) > 1 else references[0]
        return control.interpolate_global(source, y1, y2, _req_beta(beta), pipeline)
    if op == "interp-local":
        y1 = references[0]
        y2 = references[1] if len(references) > 1 else references[0]
        if region not in ("lip", "eye"):
            raise DataError("interp-local needs region 'lip' or 'eye'")
        return control.interpolate_local(source, y1, y2, _req_beta(beta), region, pipeline)
    if op == "skin":
        return control.preserve_skin(source, references[0], _req_beta(beta), pipeline)
    if op == "partial":
        if len(references) != 3:
            raise DataError("partial transfer needs exactly 3 references")
        return control.partial_transfer(source, *references, pipeline)
    return control.edit_and_transfer(source, references[0], pipeline)


def _req_beta(beta):
    if beta is None:
        raise DataError("this operation requires a beta value")
    return float(beta)


class ModelRegistry:
    """Read-only model snapshots keyed by id; reload swaps atomically."""

    def __init__(self, checkpoints: dict):
        self._paths = dict(checkpoints)
        self._models = {}
        self.reload()

    def reload(self):
        loaded = {}
        for model_id, path in self._paths.items():
            models, config, _ = models_from_checkpoint(path)
            models["esc"].eval()
            models["gmr"].eval()
            pipeline = MakeupPipeline(models["esc"], models["gmr"], config.d)
            loaded[model_id] = (pipeline, config)
        self._models = loaded

    def ids(self):
        return sorted(self._models)

    def get(self, model_id):
        if model_id not in self._models:
            raise KeyError(model_id)
        return self._models[model_id]


def create_app(registry: ModelRegistry):
    from fastapi import FastAPI, HTTPException
    from pydantic import BaseModel

    class SynthRef(BaseModel):
        seed: int
        index: int
        makeup: bool

    class ImageRef(BaseModel):
        png_b64: str | None = None
        parsing_b64: str | None = None
        synth: SynthRef | None = None

    class ApiRequest(BaseModel):
        source: ImageRef
        references: list[ImageRef] = []
        beta: float | None = None
        region: str | None = None
        model_id: str = "default"

    app = FastAPI(title="csdmt inference service")

    def to_sample(ref: ImageRef, size, tag):
        if ref.synth is not None:
            sample = make_sample(ref.synth.seed, ref.synth.index, ref.synth.makeup, size)
            if ref.png_b64 is not None:
                # edited variant of a synthetic sample: pixels from the payload,
                # parsing from the generator
                sample.image = _decode_image_b64(ref.png_b64, size, tag)
            return sample
        if ref.png_b64 is None:
            raise HTTPException(400, f"{tag}: missing image payload")
        image = _decode_image_b64(ref.png_b64, size, tag)
        if ref.parsing_b64 is None:
            raise HTTPException(
                400, f"{tag}: no parsing map given and the image is not from the "
                     "synthetic id-space; no face parser is bundled")
        try:
            parsing = decode_parsing_png(base64.b64decode(ref.parsing_b64))
        except Exception:
            raise HTTPException(400, f"{tag}: undecodable parsing map")
        if parsing.shape != (size, size):
            raise HTTPException(400, f"{tag}: parsing map must be {size}x{size}")
        return FaceSample(image=image, parsing=parsing, domain="source", id=tag)

    def _decode_image_b64(b64, size, tag):
        try:
            raw = base64.b64decode(b64)
        except Exception:
            raise HTTPException(400, f"{tag}: invalid base64")
        if len(raw) > MAX_IMAGE_BYTES:
            raise HTTPException(400, f"{tag}: image exceeds {MAX_IMAGE_BYTES} bytes")
        try:
            image = decode_png(raw)
        except Exception:
            raise HTTPException(400, f"{tag}: undecodable image")
        if image.shape[:2] != (size, size):
            raise HTTPException(400, f"{tag}: image must be {size}x{size}")
        return image

    def handle(op, req: ApiRequest):
        try:
            pipeline, config = registry.get(req.model_id)
        except KeyError:
            raise HTTPException(404, f"unknown model id {req.model_id!r}")
        size = config.size
        warnings = []
        beta = req.beta
        if beta is not None and not 0.0 <= beta <= 1.0:
            clamped = min(max(beta, 0.0), 1.0)
            warnings.append(f"beta {beta} outside [0, 1], clamped to {clamped}")
            beta = clamped
        source = to_sample(req.source, size, "source")
        references = [to_sample(r, size, f"reference[{i}]")
                      for i, r in enumerate(req.references)]
        start = time.perf_counter()
        try:
            result = run_operation(op, pipeline, source, references,
                                   beta=beta, region=req.region)
        except DataError as exc:
            raise HTTPException(400, str(exc))
        except RuntimeError as exc:
            raise HTTPException(500, f"stage failure: {exc}")
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        return {
            "schema_version": API_VERSION,
            "model_id": req.model_id,
            "result_png_b64": base64.b64encode(encode_png(result.image)).decode(),
            "deformed_lf_png_b64": base64.b64encode(
                encode_png(result.deformed_lf)).decode(),
            "timing_ms": elapsed_ms,
            "warnings": warnings + list(result.warnings),
        }

    @app.get("/health")
    def health():
        return {"status": "ok", "models": registry.ids(),
                "schema_version": API_VERSION}

    endpoint_ops = {
        "/transfer": "transfer",
        "/removal": "removal",
        "/interpolate": "interp-global",
        "/interpolate-local": "interp-local",
        "/skin": "skin",
        "/partial": "partial",
        "/edit-transfer": "edit",
    }
    for route, op_name in endpoint_ops.items():
        def make_handler(op=op_name):
            def handler(req: ApiRequest):
                return handle(op, req)
            return handler
        app.post(route)(make_handler())

    return app
