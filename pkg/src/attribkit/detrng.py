"""Deterministic hashing and counter-based random streams.

These primitives are the reproducibility backbone of the synthetic model
family and of per-image seed derivation: every stream is a pure function of
(seed, counter), so any slice of any stream can be regenerated independently
and vectorized. The exact algorithms are written down in CONTRACT.md at the
repository root; the reference gateway server reimplements them from that
document, and golden tests hold both sides to identical output.
"""

from __future__ import annotations

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15

_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

_U53_INV = 2.0**-53


def mix64(z: int) -> int:
    """Finalizer of the splitmix64 generator; bijective on u64."""
    z &= MASK64
    z ^= z >> 30
    z = (z * _MIX_A) & MASK64
    z ^= z >> 27
    z = (z * _MIX_B) & MASK64
    z ^= z >> 31
    return z


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & MASK64
    return h


def hstr(s: str) -> int:
    return fnv1a64(s.encode("utf-8"))


def combine(h: int, v: int) -> int:
    """Fold a value into a seed; chainable."""
    return mix64(((h + GOLDEN) & MASK64) ^ (v & MASK64))


def rand_u64(seed: int, i: int) -> int:
    return mix64((seed + (i + 1) * GOLDEN) & MASK64)


def rand_unit(seed: int, i: int) -> float:
    return float(rand_u64(seed, i) >> 11) * _U53_INV


def rand_unit_block(seed: int, start: int, count: int) -> np.ndarray:
    """Vectorized rand_unit for counters start .. start+count-1."""
    u30, u27, u31, u11 = np.uint64(30), np.uint64(27), np.uint64(31), np.uint64(11)
    with np.errstate(over="ignore"):
        z = np.arange(start + 1, start + count + 1, dtype=np.uint64)
        np.multiply(z, np.uint64(GOLDEN), out=z)
        np.add(z, np.uint64(seed & MASK64), out=z)
        z ^= z >> u30
        np.multiply(z, np.uint64(_MIX_A), out=z)
        z ^= z >> u27
        np.multiply(z, np.uint64(_MIX_B), out=z)
        z ^= z >> u31
        z >>= u11
    out = z.astype(np.float64)
    out *= _U53_INV
    return out


TAG_IMAGE = hstr("image")
TAG_BASE = hstr("base")
TAG_TINT = hstr("tint")
TAG_SHIFT = hstr("shift")
TAG_NOISE = hstr("noise")
TAG_FAMILY = hstr("family")
TAG_DATASET = hstr("dataset")


def image_seed(run_seed: int, model_id: str, index: int) -> int:
    """Seed of the index-th candidate image of a pool (prefix-stable)."""
    return combine(combine(combine(run_seed, TAG_IMAGE), hstr(model_id)), index)
