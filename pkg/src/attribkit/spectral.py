"""Frequency-domain fingerprint analysis.

2-D magnitude spectra, corpus-averaged spectra, radially averaged power
profiles, and the native spectral feature extractor built on top of them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, NotCentered
from .imagecore import ANALYSIS_SIZE, Image, resize_to, to_grayscale
from .similarity import FeatureVector

SPECTRAL_EXTRACTOR_ID = "spectral"


@dataclass(frozen=True)
class Spectrum2D:
    """Non-negative magnitude values; when centered, DC sits at (h//2, w//2)."""

    values: np.ndarray
    centered: bool

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"expected 2-D spectrum, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class RapsProfile:
    """Mean spectral power per integer radius, plus annulus populations."""

    bins: np.ndarray
    counts: np.ndarray

    @property
    def max_radius(self) -> int:
        return len(self.bins) - 1


def magnitude_spectrum(image: Image) -> Spectrum2D:
    """DFT magnitude of the grayscale image, quadrant-shifted to center DC."""
    gray = to_grayscale(image).pixels[:, :, 0].astype(np.float64)
    mag = np.abs(np.fft.fft2(gray))
    return Spectrum2D(np.fft.fftshift(mag), centered=True)


def average_spectrum(images, size: int = ANALYSIS_SIZE) -> Spectrum2D:
    """Element-wise mean of magnitude spectra over a common analysis raster."""
    total = None
    n = 0
    for image in images:
        spec = magnitude_spectrum(resize_to(image, size, size))
        total = spec.values.copy() if total is None else total + spec.values
        n += 1
    if total is None:
        raise EmptyInput("average_spectrum needs at least one image")
    return Spectrum2D(total / n, centered=True)


_radius_cache: dict = {}


def _radius_index(height: int, width: int):
    """Flat radius labels (rounded Euclidean distance, half up) and populations."""
    key = (height, width)
    cached = _radius_cache.get(key)
    if cached is not None:
        return cached
    cy, cx = height // 2, width // 2
    yy, xx = np.ogrid[:height, :width]
    dist = np.sqrt((yy - cy) ** 2.0 + (xx - cx) ** 2.0)
    radius = np.floor(dist + 0.5).astype(np.int64)
    max_r = min(height, width) // 2
    in_range = radius <= max_r
    labels = radius[in_range].ravel()
    counts = np.bincount(labels, minlength=max_r + 1)
    result = (in_range, labels, counts, max_r)
    _radius_cache[key] = result
    return result


def raps(spectrum: Spectrum2D) -> RapsProfile:
    """Mean power (value squared) over concentric annuli of integer radius."""
    if not spectrum.centered:
        raise NotCentered("raps requires a DC-centered spectrum")
    in_range, labels, counts, max_r = _radius_index(spectrum.height, spectrum.width)
    power = spectrum.values[in_range].ravel() ** 2
    sums = np.bincount(labels, weights=power, minlength=max_r + 1)
    return RapsProfile(bins=sums / counts, counts=counts.copy())


def _as_rgb(image: Image) -> Image:
    if image.channels == 3:
        return image
    return Image(np.repeat(image.pixels, 3, axis=2))


def spectral_features(image: Image) -> FeatureVector:
    """Deterministic native feature vector: log-compressed radial power profile
    concatenated with per-channel 16-bin color histograms, L2-normalized.

    Dimension is fixed at (ANALYSIS_SIZE // 2 + 1) + 48 for any input.
    """
    rgb = resize_to(_as_rgb(image), ANALYSIS_SIZE, ANALYSIS_SIZE)
    profile = raps(magnitude_spectrum(rgb))
    radial = np.log1p(profile.bins)
    n_px = float(ANALYSIS_SIZE * ANALYSIS_SIZE)
    hists = [
        np.bincount(rgb.pixels[:, :, c].ravel() >> 4, minlength=16) / n_px
        for c in range(3)
    ]
    raw = np.concatenate([radial] + hists)
    return FeatureVector(raw / np.linalg.norm(raw), extractor_id=SPECTRAL_EXTRACTOR_ID)


class SpectralExtractor:
    """FeatureExtractor backed by spectral_features."""

    extractor_id = SPECTRAL_EXTRACTOR_ID
    dimension = ANALYSIS_SIZE // 2 + 1 + 48

    def extract(self, image: Image) -> FeatureVector:
        return spectral_features(image)


def spectrum_heatmap(spectrum: Spectrum2D) -> Image:
    """Log-scaled, min-max normalized rendering for plot-data export."""
    logv = np.log1p(spectrum.values)
    lo, hi = float(logv.min()), float(logv.max())
    if hi > lo:
        scaled = (logv - lo) / (hi - lo) * 255.0
    else:
        scaled = np.zeros_like(logv)
    return Image(np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)[:, :, np.newaxis])
