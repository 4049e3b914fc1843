"""Wire protocol v1 over HTTP: /v1/generate, /v1/caption, /v1/embed.

Bodies are parsed by hand so every failure maps to the protocol's error
schema ({"error": code, "message": text}) rather than a framework default.
Responses are serialized with sorted keys, so identical requests yield
byte-identical bodies.
"""

from __future__ import annotations

import base64
import importlib
import io
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request, Response
from PIL import Image as PILImage

from .embed import embed_vector
from .generator import build_family, render
from .registry import PromptLookup
from .rng import draw_unit_array, fold, hash_text, seed_for_image

MAX_BATCH = 256

MODES = ("synthetic", "echo", "external-hook")


@dataclass(frozen=True)
class ShimSettings:
    mode: str = "synthetic"
    family_seed: int = 2023
    registry_path: Optional[str] = None
    api_key: Optional[str] = None
    hook: Optional[str] = None  # "module.path:callable" for external checkpoints

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


class ProtocolFault(Exception):
    def __init__(self, status: int, code: str, message: str):
        self.status = status
        self.code = code
        self.message = message
        super().__init__(message)


def _json_response(payload: dict, status: int = 200) -> Response:
    body = json.dumps(payload, sort_keys=True)
    return Response(content=body, status_code=status, media_type="application/json")


def _fault_response(fault: ProtocolFault) -> Response:
    return _json_response({"error": fault.code, "message": fault.message}, fault.status)


def _encode_png(pixels: np.ndarray) -> str:
    buf = io.BytesIO()
    PILImage.fromarray(pixels, mode="RGB").save(buf, format="PNG", compress_level=1)
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _decode_image_field(body: dict) -> np.ndarray:
    data = body.get("image")
    if not isinstance(data, str) or not data:
        raise ProtocolFault(400, "bad_request", "missing 'image' field")
    try:
        raw = base64.b64decode(data, validate=True)
        pil = PILImage.open(io.BytesIO(raw))
        pil.load()
    except Exception:
        raise ProtocolFault(400, "bad_request", "'image' is not a decodable base64 PNG/JPEG")
    if pil.mode != "RGB":
        pil = pil.convert("RGB")
    return np.asarray(pil, dtype=np.uint8)


class SyntheticShim:
    """Mirrored synthetic generators plus the registry captioner."""

    def __init__(self, settings: ShimSettings):
        self.family = build_family(settings.family_seed)

    def generate(self, model_id: str, prompt: str, n: int, seed: int) -> list:
        params = self.family.get(model_id)
        if params is None:
            raise ProtocolFault(404, "unknown_model", f"no synthetic model {model_id!r}")
        return [
            render(params, prompt, seed_for_image(seed, model_id, i)) for i in range(n)
        ]


class EchoShim:
    """Tiny deterministic stub backend for fast protocol-level testing."""

    size = 8

    def generate(self, model_id: str, prompt: str, n: int, seed: int) -> list:
        images = []
        for i in range(n):
            stream = fold(seed_for_image(seed, model_id, i), hash_text(prompt))
            flat = draw_unit_array(stream, self.size * self.size * 3)
            pixels = np.floor(flat * 256.0)
            pixels = np.minimum(pixels, 255.0).astype(np.uint8)
            images.append(pixels.reshape(self.size, self.size, 3))
        return images


class HookShim:
    """Adapter for an externally provided generator callable."""

    def __init__(self, spec: Optional[str]):
        self._generate = None
        if spec:
            module_name, _, attr = spec.partition(":")
            factory = getattr(importlib.import_module(module_name), attr)
            self._generate = factory()

    def generate(self, model_id: str, prompt: str, n: int, seed: int) -> list:
        if self._generate is None:
            raise ProtocolFault(501, "not_implemented", "no external hook configured")
        return self._generate(model_id, prompt, n, seed)


def _build_backend(settings: ShimSettings):
    if settings.mode == "synthetic":
        return SyntheticShim(settings)
    if settings.mode == "echo":
        return EchoShim()
    return HookShim(settings.hook)


def create_app(settings: ShimSettings) -> FastAPI:
    app = FastAPI(title="refserver", docs_url=None, redoc_url=None)
    backend = _build_backend(settings)
    lookup = (
        PromptLookup.from_file(settings.registry_path) if settings.registry_path else None
    )

    async def parse(request: Request) -> dict:
        if settings.api_key is not None:
            if request.headers.get("X-Api-Key") != settings.api_key:
                raise ProtocolFault(401, "unauthorized", "missing or wrong X-Api-Key")
        raw = await request.body()
        try:
            body = json.loads(raw)
        except ValueError:
            raise ProtocolFault(400, "bad_request", "body is not valid JSON")
        if not isinstance(body, dict):
            raise ProtocolFault(400, "bad_request", "body must be a JSON object")
        return body

    @app.post("/v1/generate")
    async def generate(request: Request) -> Response:
        try:
            body = await parse(request)
            model_id = body.get("model_id")
            prompt = body.get("prompt")
            n = body.get("n")
            seed = body.get("seed", 0)
            if not isinstance(model_id, str) or not model_id:
                raise ProtocolFault(400, "bad_request", "missing 'model_id'")
            if not isinstance(prompt, str) or not prompt:
                raise ProtocolFault(400, "bad_request", "missing 'prompt'")
            if not isinstance(n, int) or isinstance(n, bool) or n < 1:
                raise ProtocolFault(400, "bad_request", "'n' must be an integer >= 1")
            if n > MAX_BATCH:
                raise ProtocolFault(400, "bad_request", f"'n' exceeds the batch cap {MAX_BATCH}")
            if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
                raise ProtocolFault(400, "bad_request", "'seed' must be a non-negative integer")
            images = backend.generate(model_id, prompt, n, seed)
            return _json_response({"images": [_encode_png(img) for img in images]})
        except ProtocolFault as fault:
            return _fault_response(fault)
        except Exception as exc:  # pragma: no cover - defensive
            return _fault_response(ProtocolFault(500, "internal", str(exc)))

    @app.post("/v1/caption")
    async def caption(request: Request) -> Response:
        try:
            body = await parse(request)
            pixels = _decode_image_field(body)
            if lookup is not None:
                text = lookup.find(pixels)
                if text is None:
                    raise ProtocolFault(404, "unknown_image", "image not in the prompt registry")
            elif settings.mode == "echo":
                text = f"an image of size {pixels.shape[1]}x{pixels.shape[0]}"
            else:
                raise ProtocolFault(404, "unknown_image", "no registry loaded")
            return _json_response({"prompt": text})
        except ProtocolFault as fault:
            return _fault_response(fault)
        except Exception as exc:  # pragma: no cover - defensive
            return _fault_response(ProtocolFault(500, "internal", str(exc)))

    @app.post("/v1/embed")
    async def embed(request: Request) -> Response:
        try:
            body = await parse(request)
            pixels = _decode_image_field(body)
            vector = embed_vector(pixels)
            return _json_response({"vector": vector, "dim": len(vector)})
        except ProtocolFault as fault:
            return _fault_response(fault)
        except Exception as exc:  # pragma: no cover - defensive
            return _fault_response(ProtocolFault(500, "internal", str(exc)))

    return app
