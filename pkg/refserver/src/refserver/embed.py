"""Deterministic 64-dim image feature for /v1/embed (CONTRACT.md section 7)."""

from __future__ import annotations

import numpy as np
from PIL import Image as PILImage


def _grayscale(pixels: np.ndarray) -> np.ndarray:
    plane = (
        0.299 * pixels[:, :, 0].astype(np.float64)
        + 0.587 * pixels[:, :, 1].astype(np.float64)
        + 0.114 * pixels[:, :, 2].astype(np.float64)
    )
    return np.clip(np.floor(plane + 0.5), 0, 255)


def embed_vector(pixels: np.ndarray) -> list:
    """Radial power profile, pair-averaged to 64 bins, log-compressed, unit norm."""
    if pixels.ndim == 2:
        pixels = np.dstack([pixels] * 3)
    gray = _grayscale(pixels).astype(np.uint8)
    if gray.shape != (256, 256):
        gray = np.asarray(
            PILImage.fromarray(gray, mode="L").resize((256, 256), PILImage.BILINEAR)
        )
    plane = gray.astype(np.float64)
    spectrum = np.fft.fftshift(np.abs(np.fft.fft2(plane)))
    yy, xx = np.ogrid[:256, :256]
    radius = np.floor(np.sqrt((yy - 128) ** 2.0 + (xx - 128) ** 2.0) + 0.5).astype(np.int64)
    keep = radius <= 128
    power = spectrum[keep] ** 2
    sums = np.bincount(radius[keep].ravel(), weights=power, minlength=129)
    counts = np.bincount(radius[keep].ravel(), minlength=129)
    bins = sums / counts
    paired = (bins[0:128:2] + bins[1:128:2]) / 2.0
    feature = np.log1p(paired)
    feature /= np.linalg.norm(feature)
    return [float(v) for v in feature]
