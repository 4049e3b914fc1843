"""Pixel buffers, PNG/JPEG codecs, color conversion, and attack transforms."""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from .errors import DecodeError, InvalidParam

# Shared raster for comparing mixed-resolution sources: every image is
# resampled to this square size before spectra, SSIM, or feature extraction.
ANALYSIS_SIZE = 256


@dataclass(frozen=True)
class Image:
    """An owned RGB8 or gray8 pixel buffer.

    ``pixels`` is a read-only (height, width, channels) uint8 array with
    channels 3 (RGB) or 1 (gray). All pipeline operations treat instances as
    immutable values, so they are safe to share between threads.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, np.newaxis]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise InvalidParam(f"expected (h, w, 1|3) pixel array, got shape {px.shape}")
        if px.dtype != np.uint8:
            raise InvalidParam(f"expected uint8 samples, got {px.dtype}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidParam("image dimensions must be >= 1")
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def content_hash(self) -> str:
        """SHA-256 over dimensions and raw samples; stable across PNG round-trips."""
        h = hashlib.sha256()
        h.update(self.width.to_bytes(8, "little"))
        h.update(self.height.to_bytes(8, "little"))
        h.update(self.channels.to_bytes(1, "little"))
        h.update(self.pixels.tobytes())
        return h.hexdigest()

    def __eq__(self, other) -> bool:
        return isinstance(other, Image) and np.array_equal(self.pixels, other.pixels)


class AttackKind(str, Enum):
    GAUSSIAN_BLUR = "blur"
    JPEG_COMPRESSION = "jpeg"
    RESIZE = "resize"


@dataclass(frozen=True)
class AttackConfig:
    """One robustness attack: blur sigma, JPEG quality, or resize scale."""

    kind: AttackKind
    param: float

    def __post_init__(self):
        if self.kind == AttackKind.GAUSSIAN_BLUR:
            if not self.param > 0:
                raise InvalidParam("blur sigma must be > 0")
        elif self.kind == AttackKind.JPEG_COMPRESSION:
            if self.param != int(self.param) or not 1 <= self.param <= 100:
                raise InvalidParam("jpeg quality must be an integer in [1, 100]")
        elif self.kind == AttackKind.RESIZE:
            if not 0 < self.param <= 1:
                raise InvalidParam("resize scale must be in (0, 1]")

    def label(self) -> str:
        p = int(self.param) if self.kind == AttackKind.JPEG_COMPRESSION else self.param
        return f"{self.kind.value}:{p}"


def _from_pil(pil: PILImage.Image) -> Image:
    if pil.mode != "RGB":
        pil = pil.convert("RGB")
    return Image(np.asarray(pil, dtype=np.uint8))


def _to_pil(image: Image) -> PILImage.Image:
    if image.channels == 1:
        return PILImage.fromarray(image.pixels[:, :, 0], mode="L")
    return PILImage.fromarray(image.pixels, mode="RGB")


def decode_image(data: bytes) -> Image:
    """Decode PNG or JPEG bytes into an RGB8 image."""
    try:
        pil = PILImage.open(io.BytesIO(data))
        pil.load()
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode image bytes: {exc}") from exc
    return _from_pil(pil)


def encode_png(image: Image, compress_level: int = 6) -> bytes:
    buf = io.BytesIO()
    _to_pil(image).save(buf, format="PNG", compress_level=compress_level)
    return buf.getvalue()


def load_image(path) -> Image:
    """Load a PNG or JPEG file as RGB8; gray sources are expanded to 3 channels."""
    data = Path(path).read_bytes()
    return decode_image(data)


def save_image(image: Image, path, compress_level: int = 6) -> None:
    """Write the image losslessly as PNG (any compress level is lossless)."""
    p = Path(path)
    if str(p) == "":
        raise OSError("empty path")
    p.write_bytes(encode_png(image, compress_level))


def _quantize_u8(values: np.ndarray) -> np.ndarray:
    # round half away from zero; inputs are non-negative here
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def to_grayscale(image: Image) -> Image:
    """BT.601 luma, rounded half away from zero; gray input is returned as is."""
    if image.channels == 1:
        return image
    px = image.pixels.astype(np.float64)
    luma = 0.299 * px[:, :, 0] + 0.587 * px[:, :, 1] + 0.114 * px[:, :, 2]
    return Image(_quantize_u8(luma)[:, :, np.newaxis])


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    taps = np.exp(-(np.arange(-radius, radius + 1, dtype=np.float64) ** 2) / (2.0 * sigma * sigma))
    return taps / taps.sum()


def gaussian_blur(image: Image, sigma: float) -> Image:
    """Separable Gaussian blur, radius ceil(3*sigma), clamp-to-edge borders."""
    if not sigma > 0:
        raise InvalidParam("sigma must be > 0")
    kernel = _gaussian_kernel(sigma)
    radius = (len(kernel) - 1) // 2
    px = image.pixels.astype(np.float64)
    # rows, then columns; edge padding replicates the border sample
    padded = np.pad(px, ((0, 0), (radius, radius), (0, 0)), mode="edge")
    rows = np.zeros_like(px)
    for k, w in enumerate(kernel):
        rows += w * padded[:, k : k + image.width, :]
    padded = np.pad(rows, ((radius, radius), (0, 0), (0, 0)), mode="edge")
    out = np.zeros_like(px)
    for k, w in enumerate(kernel):
        out += w * padded[k : k + image.height, :, :]
    return Image(_quantize_u8(out))


def jpeg_roundtrip(image: Image, quality: int) -> Image:
    """Encode to baseline JPEG at the given quality and decode back."""
    if int(quality) != quality or not 1 <= quality <= 100:
        raise InvalidParam("quality must be an integer in [1, 100]")
    buf = io.BytesIO()
    _to_pil(image).save(buf, format="JPEG", quality=int(quality))
    out = _from_pil(PILImage.open(io.BytesIO(buf.getvalue())))
    if image.channels == 1:
        return to_grayscale(out)
    return out


def resize(image: Image, scale: float) -> Image:
    """Bilinear downscale to (round(w*scale), round(h*scale)); scale 1.0 is identity."""
    if not 0 < scale <= 1:
        raise InvalidParam("scale must be in (0, 1]")
    new_w = int(math.floor(image.width * scale + 0.5))
    new_h = int(math.floor(image.height * scale + 0.5))
    if new_w < 1 or new_h < 1:
        raise InvalidParam("resulting dimensions must be >= 1")
    return resize_to(image, new_w, new_h)


def resize_to(image: Image, width: int, height: int) -> Image:
    """Bilinear resample to exact dimensions; no-op when already that size."""
    if width < 1 or height < 1:
        raise InvalidParam("target dimensions must be >= 1")
    if width == image.width and height == image.height:
        return image
    pil = _to_pil(image).resize((width, height), PILImage.BILINEAR)
    out = np.asarray(pil, dtype=np.uint8)
    if image.channels == 1:
        return Image(out[:, :, np.newaxis])
    return Image(out)


def apply_attack(image: Image, attack: AttackConfig) -> Image:
    if attack.kind == AttackKind.GAUSSIAN_BLUR:
        return gaussian_blur(image, attack.param)
    if attack.kind == AttackKind.JPEG_COMPRESSION:
        return jpeg_roundtrip(image, int(attack.param))
    return resize(image, attack.param)
