"""Feature vectors and the three similarity calculators.

Cosine on extracted features is the primary route; SSIM and the
cosine+SSIM combination exist as alternative calculators selectable per run.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import DimensionMismatch, EmptyPool, TooSmall, ZeroVector
from .imagecore import ANALYSIS_SIZE, Image, resize_to, to_grayscale

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2


@dataclass(frozen=True)
class FeatureVector:
    """Fixed-dimension real vector produced by a named extractor."""

    values: np.ndarray
    extractor_id: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise DimensionMismatch(f"expected non-empty 1-D vector, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature vector entries must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dimension(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class SimScoreSet:
    """Per-candidate similarity scores of one model's pool, order-preserving."""

    model_id: str
    scores: tuple

    def __len__(self) -> int:
        return len(self.scores)


@runtime_checkable
class FeatureExtractor(Protocol):
    """Deterministic image -> fixed-dimension vector map."""

    extractor_id: str

    def extract(self, image: Image) -> FeatureVector: ...


def cosine_similarity(a: FeatureVector, b: FeatureVector) -> float:
    if a.dimension != b.dimension:
        raise DimensionMismatch(f"dimensions differ: {a.dimension} vs {b.dimension}")
    na = np.linalg.norm(a.values)
    nb = np.linalg.norm(b.values)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity undefined for zero vectors")
    value = float(np.dot(a.values, b.values) / (na * nb))
    return min(1.0, max(-1.0, value))


def _ssim_kernel() -> np.ndarray:
    half = (SSIM_WINDOW - 1) // 2
    taps = np.exp(-(np.arange(-half, half + 1, dtype=np.float64) ** 2) / (2.0 * SSIM_SIGMA**2))
    return taps / taps.sum()


def _filter_valid(plane: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation with a symmetric 1-D kernel."""
    n = len(taps)
    rows = sum(w * plane[:, k : plane.shape[1] - n + 1 + k] for k, w in enumerate(taps))
    return sum(w * rows[k : rows.shape[0] - n + 1 + k, :] for k, w in enumerate(taps))


def ssim(a: Image, b: Image) -> float:
    """Mean local structural similarity over an 11x11 Gaussian window.

    Both images are converted to grayscale; statistics are Gaussian-weighted
    with sigma 1.5 and the map is averaged over fully interior windows only.
    """
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatch(
            f"image sizes differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    if min(a.width, a.height) < SSIM_WINDOW:
        raise TooSmall(f"ssim needs min side >= {SSIM_WINDOW}")
    x = to_grayscale(a).pixels[:, :, 0].astype(np.float64)
    y = to_grayscale(b).pixels[:, :, 0].astype(np.float64)
    taps = _ssim_kernel()
    ux = _filter_valid(x, taps)
    uy = _filter_valid(y, taps)
    uxx = _filter_valid(x * x, taps)
    uyy = _filter_valid(y * y, taps)
    uxy = _filter_valid(x * y, taps)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    vxy = uxy - ux * uy
    num = (2.0 * ux * uy + SSIM_C1) * (2.0 * vxy + SSIM_C2)
    den = (ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2)
    return float(np.mean(num / den))


def combined_score(
    test: Image,
    candidate: Image,
    extractor: FeatureExtractor,
    weight: float = 0.5,
) -> float:
    """Weighted mean of feature cosine and SSIM on the shared analysis raster."""
    t = resize_to(test, ANALYSIS_SIZE, ANALYSIS_SIZE)
    c = resize_to(candidate, ANALYSIS_SIZE, ANALYSIS_SIZE)
    cos = cosine_similarity(extractor.extract(t), extractor.extract(c))
    return weight * cos + (1.0 - weight) * ssim(t, c)


def score_pool(
    test_feature: FeatureVector,
    pool_features: Sequence[FeatureVector],
    model_id: str,
) -> SimScoreSet:
    """Cosine of the test feature against each pool feature, order-preserving."""
    if len(pool_features) == 0:
        raise EmptyPool(f"no candidate features for model {model_id!r}")
    scores = tuple(cosine_similarity(test_feature, f) for f in pool_features)
    return SimScoreSet(model_id=model_id, scores=scores)
