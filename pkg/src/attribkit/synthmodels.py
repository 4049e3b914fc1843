"""A deterministic family of parametric "text-to-image models".

Each model renders the same prompt-determined base texture and then stamps
its own fingerprint on it: band energy at a model-specific spatial frequency,
an optional grid artifact, an optional palette quantization, plus white
noise. The pixel path follows CONTRACT.md exactly (integer hashing and
IEEE-exact float arithmetic only), so an independent implementation of that
document produces byte-identical images.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .attribution import ModelId, Prompt, PromptOrigin
from .detrng import (
    TAG_BASE,
    TAG_DATASET,
    TAG_FAMILY,
    TAG_NOISE,
    TAG_SHIFT,
    TAG_TINT,
    combine,
    hstr,
    image_seed,
    rand_u64,
    rand_unit,
    rand_unit_block,
)
from .errors import GenerationFailed, InvalidParam, PromptUnavailable, RegistryMiss, TooManyModels
from .imagecore import Image, save_image

SQRT12 = 3.4641016151377544

DEFAULT_NOISE_SIGMA = 2.0
DEFAULT_OUTPUT_SIZE = 256
DEFAULT_FAMILY_SEED = 2023


@dataclass(frozen=True)
class BasePattern:
    """Family-shared parameters of the prompt-driven base texture."""

    cells: tuple = (64, 32, 16)
    amps: tuple = (28.0, 14.0, 7.0)
    offset: float = 96.0


@dataclass(frozen=True)
class Fingerprint:
    """Model-specific spectral signature parameters."""

    band_period: int
    band_gain: float
    grid_period: Optional[int] = None
    grid_gain: float = 0.0
    palette_levels: Optional[int] = None

    def __post_init__(self):
        if self.band_period < 3:
            raise InvalidParam("band_period must be >= 3 (band_center < 0.5)")
        if self.palette_levels is not None and self.palette_levels < 2:
            raise InvalidParam("palette_levels must be >= 2")

    @property
    def band_center(self) -> float:
        return 1.0 / self.band_period


# Fixed fingerprint palette; entries 0 and 1 are deliberately close in band
# frequency so the default 4-model family contains one hard-to-separate pair.
# The first four band frequencies stay at or below 0.25 cycles/pixel so the
# default family's signatures survive a half-size downscale.
FINGERPRINT_PALETTE = (
    Fingerprint(band_period=12, band_gain=40.0),
    Fingerprint(band_period=10, band_gain=40.0),
    Fingerprint(band_period=6, band_gain=36.0, grid_period=16, grid_gain=14.0),
    Fingerprint(band_period=4, band_gain=36.0, palette_levels=12),
    Fingerprint(band_period=7, band_gain=38.0, grid_period=8, grid_gain=14.0),
    Fingerprint(band_period=3, band_gain=36.0, palette_levels=20),
    Fingerprint(band_period=5, band_gain=36.0, grid_period=32, grid_gain=14.0, palette_levels=8),
    Fingerprint(band_period=8, band_gain=38.0),
)


@dataclass(frozen=True)
class SynthModelSpec:
    id: ModelId
    base_pattern: BasePattern
    fingerprint: Fingerprint
    noise_sigma: float = DEFAULT_NOISE_SIGMA
    output_size: int = DEFAULT_OUTPUT_SIZE


def make_family(k: int, master_seed: int = DEFAULT_FAMILY_SEED) -> list:
    """Build k model specs with pairwise-distinct fingerprints.

    The fingerprint palette is assigned in fixed order; the master seed
    varies only the family-shared base-texture amplitude, so every family
    keeps the calibrated close pair m1/m2.
    """
    if k < 1:
        raise InvalidParam("family size must be >= 1")
    if k > len(FINGERPRINT_PALETTE):
        raise TooManyModels(
            f"family size {k} exceeds the fingerprint palette ({len(FINGERPRINT_PALETTE)})"
        )
    fam = combine(TAG_FAMILY, master_seed)
    scale = 0.85 + 0.3 * rand_unit(fam, 0)
    base = BasePattern(amps=(28.0 * scale, 14.0 * scale, 7.0 * scale))
    return [
        SynthModelSpec(id=f"m{i + 1}", base_pattern=base, fingerprint=FINGERPRINT_PALETTE[i])
        for i in range(k)
    ]


def _base_luma(base: BasePattern, prompt_text: str, size: int) -> np.ndarray:
    """Prompt-determined multi-octave value noise; identical across models."""
    p_seed = combine(TAG_BASE, hstr(prompt_text))
    coords = np.arange(size)
    luma = np.full((size, size), base.offset, dtype=np.float64)
    for octave, (cell, amp) in enumerate(zip(base.cells, base.amps)):
        g = (size - 1) // cell + 2
        lattice = rand_unit_block(combine(p_seed, octave), 0, g * g).reshape(g, g)
        gi = coords // cell
        frac = (coords % cell) / float(cell)
        fade = frac * frac * (3.0 - 2.0 * frac)
        a = lattice[gi][:, gi]
        b = lattice[gi][:, gi + 1]
        c = lattice[gi + 1][:, gi]
        d = lattice[gi + 1][:, gi + 1]
        fu, fv = fade[np.newaxis, :], fade[:, np.newaxis]
        h1 = a * (1.0 - fu) + b * fu
        h2 = c * (1.0 - fu) + d * fu
        n = h1 * (1.0 - fv) + h2 * fv
        luma = luma + amp * (2.0 * n - 1.0)
    return luma


@lru_cache(maxsize=64)
def _tinted_base(base: BasePattern, prompt_text: str, size: int) -> tuple:
    """Per-channel tinted base; cached because every image of a pool shares it."""
    luma = _base_luma(base, prompt_text, size)
    tint_seed = combine(combine(TAG_BASE, hstr(prompt_text)), TAG_TINT)
    channels = []
    for ch in range(3):
        tint = 0.78 + 0.22 * rand_unit(tint_seed, ch)
        arr = luma * tint
        arr.setflags(write=False)
        channels.append(arr)
    return tuple(channels)


@lru_cache(maxsize=32)
def _grid_pattern(size: int, period: int, gain: float) -> np.ndarray:
    on = (np.arange(size) % period == 0).astype(np.float64)
    grid = gain * np.maximum(on[np.newaxis, :], on[:, np.newaxis])
    grid.setflags(write=False)
    return grid


def _tri(values: np.ndarray, period: int) -> np.ndarray:
    return 1.0 - 4.0 * np.abs((values % period) / float(period) - 0.5)


def synth_generate(spec: SynthModelSpec, prompt: Prompt, seed: int) -> Image:
    """Render one image; fully determined by (spec, prompt text, seed)."""
    size = spec.output_size
    base_c = _tinted_base(spec.base_pattern, prompt.text, size)

    fp = spec.fingerprint
    sh = combine(seed, TAG_SHIFT)
    dx = rand_u64(sh, 0) % fp.band_period
    dy = rand_u64(sh, 1) % fp.band_period
    coords = np.arange(size)
    band = (fp.band_gain * _tri(coords + dx, fp.band_period))[np.newaxis, :] * _tri(
        coords + dy, fp.band_period
    )[:, np.newaxis]

    noise = rand_unit_block(combine(seed, TAG_NOISE), 0, 3 * size * size)
    noise -= 0.5
    noise *= spec.noise_sigma * SQRT12
    noise = noise.reshape(3, size, size)

    channels = []
    for ch in range(3):
        # in-place accumulation keeps the contract's left-to-right addition order
        raw = base_c[ch] + band
        if fp.grid_period is not None:
            raw += _grid_pattern(size, fp.grid_period, fp.grid_gain)
        raw += noise[ch]
        raw += 0.5
        np.floor(raw, out=raw)
        np.clip(raw, 0.0, 255.0, out=raw)
        if fp.palette_levels is not None:
            q = fp.palette_levels
            level = (raw.astype(np.int64) * q) // 256
            channels.append(((level * 510 + (q - 1)) // (2 * (q - 1))).astype(np.uint8))
        else:
            channels.append(raw.astype(np.uint8))
    return Image(np.stack(channels, axis=2))


def degrade_prompt(text: str) -> str:
    """Drop every third whitespace token (1-indexed); keep at least one."""
    tokens = text.split()
    kept = [t for i, t in enumerate(tokens, start=1) if i % 3 != 0]
    if not kept:
        kept = tokens[:1]
    return " ".join(kept)


class PromptRegistry:
    """Insert-once map from image content hash to the generating prompt.

    In lossy mode, lookups return a deterministic token-dropped paraphrase,
    standing in for the information loss of a real captioning model.
    """

    def __init__(self, lossy_mode: bool = False):
        self.lossy_mode = lossy_mode
        self._entries: dict = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    def register(self, image: Image, prompt_text: str) -> None:
        key = image.content_hash()
        with self._lock:
            existing = self._entries.get(key)
            if existing is not None and existing != prompt_text:
                raise InvalidParam(f"registry already holds a different prompt for {key[:12]}")
            self._entries[key] = prompt_text

    def caption(self, image: Image) -> Prompt:
        text = self._entries.get(image.content_hash())
        if text is None:
            raise RegistryMiss("image not present in the prompt registry")
        if self.lossy_mode:
            return Prompt(degrade_prompt(text), PromptOrigin.SYNTHETIC_REGISTRY)
        return Prompt(text, PromptOrigin.NATURAL)

    def save(self, path) -> None:
        payload = {"entries": self._entries}
        Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path, lossy_mode: bool = False) -> "PromptRegistry":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        reg = cls(lossy_mode=lossy_mode)
        reg._entries = dict(payload["entries"])
        return reg


def registry_caption(registry: PromptRegistry, image: Image) -> Prompt:
    return registry.caption(image)


class SyntheticRegistrySource:
    """PromptSource adapter over a registry; misses become PromptUnavailable."""

    def __init__(self, registry: PromptRegistry):
        self.registry = registry

    def invert(self, image: Image) -> Prompt:
        try:
            return self.registry.caption(image)
        except RegistryMiss as exc:
            raise PromptUnavailable(str(exc)) from exc


class SyntheticBackend:
    """GenerationBackend over a family of synthetic model specs."""

    def __init__(self, specs: Sequence[SynthModelSpec]):
        self._specs = {spec.id: spec for spec in specs}

    @property
    def model_ids(self) -> list:
        return list(self._specs)

    def generate(self, model_id: ModelId, prompt: Prompt, n: int, seed: int) -> list:
        spec = self._specs.get(model_id)
        if spec is None:
            raise GenerationFailed(model_id, "unknown synthetic model")
        return [
            synth_generate(spec, prompt, image_seed(seed, model_id, i)) for i in range(n)
        ]


_ADJECTIVES = (
    "quiet", "busy", "foggy", "sunlit", "ancient", "narrow", "wide", "crowded",
    "empty", "colorful", "rainy", "snowy", "dusty", "bright", "shaded", "winding",
)
_SUBJECTS = (
    "harbor", "market", "street", "bridge", "garden", "castle", "forest", "village",
    "station", "canal", "tower", "plaza", "lighthouse", "orchard", "workshop", "library",
)
_SETTINGS = (
    "at dawn", "at dusk", "in summer", "in winter", "under heavy clouds",
    "beside the river", "on a hillside", "near the coast", "after the storm",
    "during the festival", "in the old town", "by the north gate",
)
_DETAILS = (
    "with small boats", "with stone arches", "full of lanterns", "lined with trees",
    "covered in ivy", "dotted with stalls", "with tall chimneys", "with painted doors",
    "with iron railings", "with wooden carts", "with striped awnings", "with brick walls",
)


def sample_prompts(n: int, seed: int) -> list:
    """Deterministic varied scene prompts (7+ tokens, so lossy dropping bites)."""
    s = combine(hstr("prompts"), seed)
    prompts = []
    for i in range(n):
        adj = _ADJECTIVES[rand_u64(s, 4 * i) % len(_ADJECTIVES)]
        subj = _SUBJECTS[rand_u64(s, 4 * i + 1) % len(_SUBJECTS)]
        setting = _SETTINGS[rand_u64(s, 4 * i + 2) % len(_SETTINGS)]
        detail = _DETAILS[rand_u64(s, 4 * i + 3) % len(_DETAILS)]
        prompts.append(f"a {adj} {subj} {setting} {detail}")
    return prompts


def generate_dataset(
    out_dir,
    specs: Sequence[SynthModelSpec],
    prompts: Sequence[str],
    per_prompt: int,
    dataset_seed: int,
) -> list:
    """Emit a labeled dataset: PNGs, a JSONL manifest, and a prompt registry.

    Labels cycle through the family so the dataset stays balanced. Item seeds
    live in their own stream, disjoint from candidate-pool seeds.

    Returns the manifest rows ({path, label, prompt}, paths relative to
    out_dir).
    """
    if per_prompt < 1:
        raise InvalidParam("per_prompt must be >= 1")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    ds_base = combine(TAG_DATASET, dataset_seed)
    registry = PromptRegistry()
    rows = []
    counter = 0
    for prompt_text in prompts:
        prompt = Prompt(prompt_text, PromptOrigin.NATURAL)
        for _ in range(per_prompt):
            spec = specs[counter % len(specs)]
            img = synth_generate(spec, prompt, image_seed(ds_base, spec.id, counter))
            rel = f"images/{counter:05d}_{spec.id}.png"
            save_image(img, out / rel)
            registry.register(img, prompt_text)
            rows.append({"path": rel, "label": spec.id, "prompt": prompt_text})
            counter += 1
    with (out / "manifest.jsonl").open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    registry.save(out / "registry.json")
    return rows
