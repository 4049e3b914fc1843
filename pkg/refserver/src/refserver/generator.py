"""Synthetic model family renderer, implemented from CONTRACT.md sections 3-4.

The arithmetic follows the contract's expression trees exactly (IEEE binary64,
no transcendental functions), so output pixels are bit-identical to any other
conforming implementation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .rng import (
    GOLDEN_GAMMA,
    TAG_BASE,
    TAG_FAMILY,
    TAG_NOISE,
    TAG_SHIFT,
    TAG_TINT,
    draw_u64,
    draw_unit,
    draw_unit_array,
    fold,
    hash_text,
)

ROOT_TWELVE = 3.4641016151377544
NOISE_SIGMA = 2.0
OUTPUT_SIZE = 256

# contract section 3: (band_period, band_gain, grid_period, grid_gain, palette_levels)
PALETTE_TABLE = (
    (12, 40.0, None, 0.0, None),
    (10, 40.0, None, 0.0, None),
    (6, 36.0, 16, 14.0, None),
    (4, 36.0, None, 0.0, 12),
    (7, 38.0, 8, 14.0, None),
    (3, 36.0, None, 0.0, 20),
    (5, 36.0, 32, 14.0, 8),
    (8, 38.0, None, 0.0, None),
)


@dataclass(frozen=True)
class ModelParams:
    model_id: str
    band_period: int
    band_gain: float
    grid_period: Optional[int]
    grid_gain: float
    palette_levels: Optional[int]
    amp_scale: float
    size: int = OUTPUT_SIZE


def build_family(master_seed: int, count: int = len(PALETTE_TABLE)) -> dict:
    if not 1 <= count <= len(PALETTE_TABLE):
        raise ValueError(f"family size must be in 1..{len(PALETTE_TABLE)}")
    scale = 0.85 + 0.3 * draw_unit(fold(TAG_FAMILY, master_seed), 0)
    family = {}
    for idx in range(count):
        period, gain, grid_p, grid_g, levels = PALETTE_TABLE[idx]
        mid = f"m{idx + 1}"
        family[mid] = ModelParams(
            model_id=mid,
            band_period=period,
            band_gain=gain,
            grid_period=grid_p,
            grid_gain=grid_g,
            palette_levels=levels,
            amp_scale=scale,
        )
    return family


def _value_noise_octave(seed: int, cell: int, size: int) -> np.ndarray:
    grid_n = (size - 1) // cell + 2
    lattice = draw_unit_array(seed, grid_n * grid_n).reshape(grid_n, grid_n)
    axis = np.arange(size)
    cell_idx = axis // cell
    t = (axis % cell) / cell
    smooth = t * t * (3.0 - 2.0 * t)
    ix, iy = np.meshgrid(cell_idx, cell_idx)  # ix varies along columns
    fx, fy = np.meshgrid(smooth, smooth)
    c00 = lattice[iy, ix]
    c01 = lattice[iy, ix + 1]
    c10 = lattice[iy + 1, ix]
    c11 = lattice[iy + 1, ix + 1]
    top = c00 * (1.0 - fx) + c01 * fx
    bottom = c10 * (1.0 - fx) + c11 * fx
    return top * (1.0 - fy) + bottom * fy


def _triangle(values: np.ndarray, period: int) -> np.ndarray:
    return 1.0 - 4.0 * np.abs((values % period) / float(period) - 0.5)


def render(params: ModelParams, prompt_text: str, image_seed: int) -> np.ndarray:
    """One (size, size, 3) uint8 frame, contract section 4."""
    size = params.size
    prompt_seed = fold(TAG_BASE, hash_text(prompt_text))

    cells = (64, 32, 16)
    amps = (28.0 * params.amp_scale, 14.0 * params.amp_scale, 7.0 * params.amp_scale)
    field = np.full((size, size), 96.0)
    for octave, (cell, amp) in enumerate(zip(cells, amps)):
        noise = _value_noise_octave(fold(prompt_seed, octave), cell, size)
        field = field + amp * (2.0 * noise - 1.0)

    shift_seed = fold(image_seed, TAG_SHIFT)
    dx = draw_u64(shift_seed, 0) % params.band_period
    dy = draw_u64(shift_seed, 1) % params.band_period
    col = np.arange(size)
    xs, ys = np.meshgrid(col + dx, col + dy)
    stripes = (params.band_gain * _triangle(xs, params.band_period)) * _triangle(
        ys, params.band_period
    )

    lines = None
    if params.grid_period is not None:
        hit = (col % params.grid_period == 0).astype(np.float64)
        hx, hy = np.meshgrid(hit, hit)
        lines = params.grid_gain * np.maximum(hx, hy)

    tint_seed = fold(prompt_seed, TAG_TINT)
    noise_block = draw_unit_array(fold(image_seed, TAG_NOISE), 3 * size * size)
    noise_block -= 0.5
    noise_block *= NOISE_SIGMA * ROOT_TWELVE

    planes = []
    for channel in range(3):
        tint = 0.78 + 0.22 * draw_unit(tint_seed, channel)
        frame = field * tint + stripes
        if lines is not None:
            frame = frame + lines
        frame = frame + noise_block[channel * size * size : (channel + 1) * size * size].reshape(
            size, size
        )
        frame = np.floor(frame + 0.5)
        frame = np.minimum(np.maximum(frame, 0.0), 255.0)
        if params.palette_levels is not None:
            q = params.palette_levels
            steps = (frame.astype(np.int64) * q) // 256
            frame = (steps * 510 + (q - 1)) // (2 * (q - 1))
        planes.append(frame.astype(np.uint8))
    return np.dstack(planes)
