"""Wire-protocol client for generation/caption/embedding services, plus the
on-disk candidate-pool cache.

Protocol v1, JSON over HTTP:
    POST /v1/generate  {"model_id", "prompt", "n", "seed"?} -> {"images": [b64 PNG, ...]}
    POST /v1/caption   {"image": b64 PNG}                   -> {"prompt": str}
    POST /v1/embed     {"image": b64 PNG}                   -> {"vector": [...], "dim": int}
Errors are 4xx/5xx with {"error": code, "message": text}.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import shutil
import threading
import time
import uuid
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import requests
from filelock import FileLock

from .attribution import ModelId, Prompt, PromptOrigin
from .errors import (
    CountMismatch,
    DecodeError,
    GenerationFailed,
    NonFiniteVector,
    ProtocolError,
    PromptUnavailable,
    RemoteError,
    TransportError,
)
from .imagecore import Image, decode_image, encode_png, load_image, save_image
from .similarity import FeatureVector

TOOL_VERSION = "attribkit-0.1.0"


@dataclass(frozen=True)
class GatewayConfig:
    base_url: str
    timeout_ms: int = 30_000
    retries: int = 2
    api_key: Optional[str] = None

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be > 0")


def image_to_b64(image: Image) -> str:
    return base64.b64encode(encode_png(image)).decode("ascii")


def b64_to_image(data: str) -> Image:
    try:
        raw = base64.b64decode(data, validate=True)
    except Exception as exc:
        raise ProtocolError(f"invalid base64 image payload: {exc}") from exc
    try:
        return decode_image(raw)
    except DecodeError as exc:
        raise ProtocolError(f"undecodable image payload: {exc}") from exc


class GatewayClient:
    """Thin retrying JSON client; request payloads are immutable across retries.

    Transport failures and 5xx responses are retried with exponential backoff
    (`retries` extra attempts); 4xx responses fail immediately since resending
    the same request cannot succeed.
    """

    def __init__(self, config: GatewayConfig, session: Optional[requests.Session] = None):
        self.config = config
        self._session = session or requests.Session()

    def _post(self, endpoint: str, payload: dict) -> dict:
        url = self.config.base_url.rstrip("/") + endpoint
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["X-Api-Key"] = self.config.api_key
        body = json.dumps(payload)
        timeout = self.config.timeout_ms / 1000.0
        last_exc: Exception | None = None
        for attempt in range(self.config.retries + 1):
            if attempt:
                time.sleep(min(0.05 * (2 ** (attempt - 1)), 1.0))
            try:
                resp = self._session.post(url, data=body, headers=headers, timeout=timeout)
            except requests.RequestException as exc:
                last_exc = TransportError(f"POST {endpoint} failed: {exc}")
                continue
            if resp.status_code >= 500:
                last_exc = RemoteError(*_error_fields(resp))
                continue
            if resp.status_code >= 400:
                raise RemoteError(*_error_fields(resp))
            try:
                parsed = resp.json()
            except ValueError as exc:
                raise ProtocolError(f"non-JSON response from {endpoint}") from exc
            if not isinstance(parsed, dict):
                raise ProtocolError(f"expected JSON object from {endpoint}")
            return parsed
        if isinstance(last_exc, RemoteError):
            raise last_exc
        raise last_exc if last_exc else TransportError(f"POST {endpoint} failed")

    def generate(self, model_id: ModelId, prompt: Prompt, n: int, seed: int) -> list:
        """POST /v1/generate; validates the count and decodes every image."""
        body = self._post(
            "/v1/generate",
            {"model_id": model_id, "prompt": prompt.text, "n": n, "seed": seed},
        )
        images = body.get("images")
        if not isinstance(images, list):
            raise ProtocolError("generate response missing 'images' list")
        if len(images) != n:
            raise CountMismatch(f"requested {n} images, got {len(images)}")
        return [b64_to_image(item) for item in images]

    def caption(self, image: Image) -> Prompt:
        body = self._post("/v1/caption", {"image": image_to_b64(image)})
        text = body.get("prompt")
        if not isinstance(text, str) or not text:
            raise ProtocolError("caption response missing non-empty 'prompt'")
        return Prompt(text, PromptOrigin.GENERATED)

    def embed(self, image: Image) -> FeatureVector:
        body = self._post("/v1/embed", {"image": image_to_b64(image)})
        vector = body.get("vector")
        dim = body.get("dim")
        if not isinstance(vector, list) or not isinstance(dim, int):
            raise ProtocolError("embed response missing 'vector'/'dim'")
        if dim != len(vector):
            raise ProtocolError(f"embed dim {dim} != vector length {len(vector)}")
        arr = np.asarray(vector, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteVector("embed vector contains non-finite entries")
        return FeatureVector(arr, extractor_id="embed")


def _error_fields(resp) -> tuple:
    try:
        body = resp.json()
        return resp.status_code, str(body.get("error", "unknown")), str(body.get("message", ""))
    except ValueError:
        return resp.status_code, "unknown", resp.text[:200]


def remote_generate(cfg: GatewayConfig, model_id, prompt, n, seed) -> list:
    return GatewayClient(cfg).generate(model_id, prompt, n, seed)


def remote_caption(cfg: GatewayConfig, image: Image) -> Prompt:
    return GatewayClient(cfg).caption(image)


def remote_embed(cfg: GatewayConfig, image: Image) -> FeatureVector:
    return GatewayClient(cfg).embed(image)


class RemoteCaptionSource:
    """PromptSource backed by the /v1/caption endpoint."""

    def __init__(self, client: GatewayClient):
        self.client = client

    def invert(self, image: Image) -> Prompt:
        try:
            return self.client.caption(image)
        except (TransportError, RemoteError, ProtocolError) as exc:
            raise PromptUnavailable(f"remote caption failed: {exc}") from exc


class RemoteEmbedExtractor:
    """FeatureExtractor backed by the /v1/embed endpoint."""

    extractor_id = "embed"

    def __init__(self, client: GatewayClient):
        self.client = client

    def extract(self, image: Image) -> FeatureVector:
        return self.client.embed(image)


class GatewayBackend:
    """GenerationBackend over the /v1/generate endpoint."""

    def __init__(self, client: GatewayClient):
        self.client = client

    def generate(self, model_id, prompt, n, seed) -> list:
        try:
            return self.client.generate(model_id, prompt, n, seed)
        except (TransportError, RemoteError, ProtocolError, CountMismatch) as exc:
            raise GenerationFailed(model_id, str(exc)) from exc


def prompt_hash(prompt_text: str) -> str:
    return hashlib.sha256(prompt_text.encode("utf-8")).hexdigest()


class PoolCache:
    """Content-addressed pool store: <cache_dir>/pools/<prompt_hash>/<model_id>/.

    Entries are written to a temp directory and renamed into place, so a
    crash never leaves a visible partial entry. Per-entry file locks make
    concurrent identical requests produce exactly one generation. A cached
    entry with the same seed and gamma >= requested serves the request by
    prefix (per-image seeds depend only on index).
    """

    def __init__(self, cache_dir):
        self.root = Path(cache_dir) / "pools"
        self.root.mkdir(parents=True, exist_ok=True)
        # test hook, invoked between temp write and publish
        self._pre_publish_hook: Optional[Callable[[], None]] = None

    def _entry_dir(self, prompt_text: str, model_id: str) -> Path:
        return self.root / prompt_hash(prompt_text) / model_id

    def _read_entry(self, entry: Path, gamma: int, seed: int):
        manifest_path = entry / "manifest.json"
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
            if manifest["seed"] != seed or manifest["gamma"] < gamma:
                return None
            images = []
            for i in range(gamma):
                images.append(load_image(entry / f"{i:03d}.png"))
            return images
        except (OSError, ValueError, KeyError, TypeError, DecodeError):
            return None  # corrupt or incomplete entry: treat as a miss

    def get_or_generate(
        self,
        prompt: Prompt,
        model_id: ModelId,
        gamma: int,
        seed: int,
        producer: Callable[[int], list],
    ) -> list:
        """Return cached images or invoke ``producer(gamma)`` and persist."""
        entry = self._entry_dir(prompt.text, model_id)
        entry.parent.mkdir(parents=True, exist_ok=True)
        lock = FileLock(str(entry) + ".lock")
        with lock:
            cached = self._read_entry(entry, gamma, seed)
            if cached is not None:
                return cached
            images = producer(gamma)
            if len(images) != gamma:
                raise CountMismatch(f"producer returned {len(images)} images, wanted {gamma}")
            tmp = entry.parent / f".tmp-{model_id}-{uuid.uuid4().hex[:8]}"
            tmp.mkdir(parents=True)
            try:
                for i, img in enumerate(images):
                    # low compression level: cache writes are hot, PNG stays lossless
                    save_image(img, tmp / f"{i:03d}.png", compress_level=1)
                manifest = {
                    "prompt": prompt.text,
                    "model_id": model_id,
                    "gamma": gamma,
                    "seed": seed,
                    "created_unix": int(time.time()),
                    "tool_version": TOOL_VERSION,
                }
                (tmp / "manifest.json").write_text(
                    json.dumps(manifest, sort_keys=True), encoding="utf-8"
                )
                if self._pre_publish_hook is not None:
                    self._pre_publish_hook()
                if entry.exists():
                    shutil.rmtree(entry)
                os.rename(tmp, entry)
            finally:
                if tmp.exists():
                    shutil.rmtree(tmp, ignore_errors=True)
            return images


class CachingBackend:
    """Wraps any GenerationBackend with the on-disk pool cache.

    A small in-memory LRU of recently served pools avoids re-decoding PNGs
    when consecutive requests hit the same (model, prompt, seed); a stored
    pool serves any smaller request by prefix.
    """

    def __init__(self, inner, cache: PoolCache, lru_pools: int = 8):
        self.inner = inner
        self.cache = cache
        self._lru: "OrderedDict" = OrderedDict()
        self._lru_pools = lru_pools
        self._lock = threading.Lock()

    def generate(self, model_id, prompt, n, seed) -> list:
        key = (model_id, prompt.text, seed)
        with self._lock:
            held = self._lru.get(key)
            if held is not None and len(held) >= n:
                self._lru.move_to_end(key)
                return list(held[:n])
        images = self.cache.get_or_generate(
            prompt, model_id, n, seed,
            lambda gamma: self.inner.generate(model_id, prompt, gamma, seed),
        )
        with self._lock:
            self._lru[key] = list(images)
            self._lru.move_to_end(key)
            while len(self._lru) > self._lru_pools:
                self._lru.popitem(last=False)
        return images
