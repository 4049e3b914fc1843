"""Integer hashing primitives, implemented from CONTRACT.md section 1-2.

This is a deliberate second implementation: the shim must reproduce the
client-side generator byte for byte without sharing code with it.
"""

from __future__ import annotations

import numpy as np

U64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def scramble(value: int) -> int:
    v = value & U64
    v ^= v >> 30
    v = (v * 0xBF58476D1CE4E5B9) & U64
    v ^= v >> 27
    v = (v * 0x94D049BB133111EB) & U64
    v ^= v >> 31
    return v


def hash_bytes(data: bytes) -> int:
    acc = 0xCBF29CE484222325
    for b in data:
        acc = ((acc ^ b) * 0x100000001B3) & U64
    return acc


def hash_text(text: str) -> int:
    return hash_bytes(text.encode("utf-8"))


def fold(seed: int, value: int) -> int:
    return scramble(((seed + GOLDEN_GAMMA) & U64) ^ (value & U64))


def draw_u64(seed: int, counter: int) -> int:
    return scramble((seed + (counter + 1) * GOLDEN_GAMMA) & U64)


def draw_unit(seed: int, counter: int) -> float:
    return float(draw_u64(seed, counter) >> 11) * 2.0**-53


def draw_unit_array(seed: int, count: int) -> np.ndarray:
    """draw_unit for counters 0..count-1, vectorized."""
    shift30, shift27, shift31, shift11 = (np.uint64(s) for s in (30, 27, 31, 11))
    with np.errstate(over="ignore"):
        state = np.arange(1, count + 1, dtype=np.uint64) * np.uint64(GOLDEN_GAMMA)
        state += np.uint64(seed & U64)
        state ^= state >> shift30
        state *= np.uint64(0xBF58476D1CE4E5B9)
        state ^= state >> shift27
        state *= np.uint64(0x94D049BB133111EB)
        state ^= state >> shift31
        state >>= shift11
    unit = state.astype(np.float64)
    unit *= 2.0**-53
    return unit


TAG_IMAGE = hash_text("image")
TAG_BASE = hash_text("base")
TAG_TINT = hash_text("tint")
TAG_SHIFT = hash_text("shift")
TAG_NOISE = hash_text("noise")
TAG_FAMILY = hash_text("family")


def seed_for_image(run_seed: int, model_id: str, index: int) -> int:
    """Per-image seed, contract section 2; depends only on these three."""
    return fold(fold(fold(run_seed, TAG_IMAGE), hash_text(model_id)), index)
