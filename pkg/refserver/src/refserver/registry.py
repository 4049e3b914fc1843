"""Read-only prompt registry, keyed by the content hash of CONTRACT.md sec. 6."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional

import numpy as np


def content_hash(pixels: np.ndarray) -> str:
    if pixels.ndim == 2:
        pixels = pixels[:, :, np.newaxis]
    height, width, channels = pixels.shape
    digest = hashlib.sha256()
    digest.update(int(width).to_bytes(8, "little"))
    digest.update(int(height).to_bytes(8, "little"))
    digest.update(int(channels).to_bytes(1, "little"))
    digest.update(np.ascontiguousarray(pixels).tobytes())
    return digest.hexdigest()


class PromptLookup:
    def __init__(self, entries: dict):
        self._entries = dict(entries)

    @classmethod
    def from_file(cls, path) -> "PromptLookup":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(payload["entries"])

    def find(self, pixels: np.ndarray) -> Optional[str]:
        return self._entries.get(content_hash(pixels))

    def __len__(self) -> int:
        return len(self._entries)
