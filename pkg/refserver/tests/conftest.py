import base64
import io
import json
import threading
import time
from pathlib import Path

import numpy as np
import pytest
import uvicorn
from PIL import Image as PILImage

from refserver.app import ShimSettings, create_app
from refserver.generator import build_family, render
from refserver.registry import content_hash
from refserver.rng import seed_for_image

FIXED_PROMPT = "a crowded market in the old town with striped awnings"
REGISTRY_SEED = 5


def registered_image_pixels() -> np.ndarray:
    """Deterministic image whose prompt is present in the test registry."""
    family = build_family(2023, 4)
    return render(family["m1"], FIXED_PROMPT, seed_for_image(REGISTRY_SEED, "m1", 0))


def pixels_to_b64(pixels: np.ndarray) -> str:
    buf = io.BytesIO()
    PILImage.fromarray(pixels, mode="RGB").save(buf, format="PNG", compress_level=1)
    return base64.b64encode(buf.getvalue()).decode("ascii")


def b64_to_pixels(data: str) -> np.ndarray:
    pil = PILImage.open(io.BytesIO(base64.b64decode(data)))
    pil.load()
    return np.asarray(pil.convert("RGB"), dtype=np.uint8)


def write_test_registry(path: Path) -> None:
    pixels = registered_image_pixels()
    payload = {"entries": {content_hash(pixels): FIXED_PROMPT}}
    path.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


class RunningShim:
    def __init__(self, settings: ShimSettings):
        self._server = uvicorn.Server(
            uvicorn.Config(create_app(settings), host="127.0.0.1", port=0, log_level="warning")
        )
        self._thread = threading.Thread(target=self._server.run, daemon=True)

    def __enter__(self) -> str:
        self._thread.start()
        deadline = time.time() + 15
        while not self._server.started:
            if time.time() > deadline:
                raise RuntimeError("shim did not start")
            time.sleep(0.02)
        port = self._server.servers[0].sockets[0].getsockname()[1]
        return f"http://127.0.0.1:{port}"

    def __exit__(self, *exc):
        self._server.should_exit = True
        self._thread.join(timeout=5)


@pytest.fixture(scope="session")
def registry_file(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("registry") / "registry.json"
    write_test_registry(path)
    return path


@pytest.fixture(scope="session")
def synthetic_shim(registry_file):
    settings = ShimSettings(mode="synthetic", family_seed=2023, registry_path=str(registry_file))
    with RunningShim(settings) as url:
        yield url


@pytest.fixture(scope="session")
def echo_shim():
    with RunningShim(ShimSettings(mode="echo")) as url:
        yield url
