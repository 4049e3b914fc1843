"""The four-step attribution pipeline: prompt acquisition, candidate pool
generation, similarity calculation, and ranking-based source inference."""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol, Sequence, runtime_checkable

from .errors import (
    AttribError,
    EmptyScores,
    GenerationFailed,
    InvalidParam,
    PromptUnavailable,
)
from .imagecore import ANALYSIS_SIZE, Image, resize_to
from .similarity import (
    FeatureExtractor,
    FeatureVector,
    SimScoreSet,
    combined_score,
    cosine_similarity,
    score_pool,
    ssim,
)

ModelId = str


def validate_model_set(models: Sequence[ModelId]) -> tuple:
    """Model ids must be non-empty and unique; order is preserved."""
    if len(models) == 0:
        raise InvalidParam("model set must be non-empty")
    seen = set()
    for m in models:
        if not m:
            raise InvalidParam("model ids must be non-empty")
        if m in seen:
            raise InvalidParam(f"duplicate model id {m!r}")
        seen.add(m)
    return tuple(models)


class PromptOrigin(str, Enum):
    NATURAL = "natural"
    GENERATED = "generated"
    SYNTHETIC_REGISTRY = "synthetic_registry"


@dataclass(frozen=True)
class Prompt:
    text: str
    source: PromptOrigin

    def __post_init__(self):
        if not self.text:
            raise InvalidParam("prompt text must be non-empty")


@runtime_checkable
class PromptSource(Protocol):
    """Recovers a textual prompt for an image."""

    def invert(self, image: Image) -> Prompt: ...


class KnownPrompt:
    """Prompt source for the condition where the true prompt is available."""

    def __init__(self, text: Optional[str]):
        self._text = text

    def invert(self, image: Image) -> Prompt:
        if not self._text:
            raise PromptUnavailable("no stored prompt for this image")
        return Prompt(self._text, PromptOrigin.NATURAL)


@runtime_checkable
class GenerationBackend(Protocol):
    """Produces n candidate images for a model from a prompt and run seed."""

    def generate(self, model_id: ModelId, prompt: Prompt, n: int, seed: int) -> list: ...


class RankScheme(str, Enum):
    AVG = "avg"
    BEST = "best"
    AVG_BEST = "avg_best"

    @classmethod
    def parse(cls, name: str) -> "RankScheme":
        try:
            return cls(name.strip().lower().replace("+", "_").replace("-", "_"))
        except ValueError:
            raise InvalidParam(f"unknown ranking scheme {name!r}") from None


@dataclass(frozen=True)
class CandidatePool:
    """gamma regenerated images per candidate model, with provenance."""

    prompt: Prompt
    gamma: int
    entries: dict  # ModelId -> list[Image], insertion order = model order
    seed: int

    def __post_init__(self):
        for model_id, images in self.entries.items():
            if len(images) != self.gamma:
                raise GenerationFailed(
                    model_id, f"expected {self.gamma} images, got {len(images)}"
                )


@dataclass(frozen=True)
class AttributionResult:
    best: ModelId
    final_scores: dict  # ModelId -> float
    score_sets: dict  # ModelId -> SimScoreSet
    scheme: RankScheme
    timing_ms: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "best": self.best,
            "final_scores": {m: float(s) for m, s in self.final_scores.items()},
            "score_sets": {
                m: [float(s) for s in ss.scores] for m, ss in self.score_sets.items()
            },
            "scheme": self.scheme.value,
            "timing_ms": {k: float(v) for k, v in self.timing_ms.items()},
        }


@dataclass(frozen=True)
class AttributionConfig:
    gamma: int = 100
    scheme: RankScheme = RankScheme.BEST
    method: str = "spectral"  # spectral | embed | ssim | combined
    seed: int = 2023

    def __post_init__(self):
        if self.gamma < 1:
            raise InvalidParam("gamma must be >= 1")
        if self.method not in ("spectral", "embed", "ssim", "combined"):
            raise InvalidParam(f"unknown similarity method {self.method!r}")


def invert_prompt(image: Image, source: PromptSource) -> Prompt:
    return source.invert(image)


def generate_pool(
    prompt: Prompt,
    models: Sequence[ModelId],
    gamma: int,
    seed: int,
    backend: GenerationBackend,
) -> CandidatePool:
    """Regenerate gamma candidate images per model.

    Per-image seeds are derived from (seed, model id, index), so a pool is
    reproducible and is a prefix of any larger pool with the same seed. Any
    model failing aborts the whole pool; silently dropping a candidate would
    bias the final argmax.
    """
    if gamma < 1:
        raise InvalidParam("gamma must be >= 1")
    model_set = validate_model_set(models)
    entries = {}
    for model_id in model_set:
        try:
            images = backend.generate(model_id, prompt, gamma, seed)
        except GenerationFailed:
            raise
        except AttribError as exc:
            raise GenerationFailed(model_id, str(exc)) from exc
        if len(images) != gamma:
            raise GenerationFailed(model_id, f"expected {gamma} images, got {len(images)}")
        entries[model_id] = list(images)
    return CandidatePool(prompt=prompt, gamma=gamma, entries=entries, seed=seed)


def rank_score(scores: SimScoreSet, scheme: RankScheme) -> float:
    """Reduce a score set to one final score per the selected scheme."""
    if len(scores) == 0:
        raise EmptyScores(f"empty score set for model {scores.model_id!r}")
    values = scores.scores
    mean = sum(values) / len(values)
    best = max(values)
    if scheme == RankScheme.AVG:
        return mean
    if scheme == RankScheme.BEST:
        return best
    return (mean + best) / 2.0


class Scorer(Protocol):
    """Turns (test image, one model's pool) into a similarity score set."""

    def prepare(self, test: Image): ...

    def pool_scores(self, prepared, pool: CandidatePool, model_id: ModelId) -> SimScoreSet: ...


def _pool_memo_key(pool: CandidatePool, model_id: ModelId, extractor_id: str):
    return (pool.prompt.text, model_id, pool.seed, extractor_id)


class CosineFeatureScorer:
    """Eq.-style route: extract features, score by cosine.

    An optional memo dict caches pool feature matrices keyed by
    (prompt text, model id, seed, extractor id); pools are prefix-stable in
    gamma, so a cached larger pool serves any smaller request by slicing.
    """

    def __init__(self, extractor: FeatureExtractor, memo: Optional[dict] = None):
        self.extractor = extractor
        self.memo = memo

    def prepare(self, test: Image) -> FeatureVector:
        return self.extractor.extract(test)

    def _pool_features(self, pool: CandidatePool, model_id: ModelId) -> list:
        images = pool.entries[model_id]
        if self.memo is None:
            return [self.extractor.extract(img) for img in images]
        key = _pool_memo_key(pool, model_id, self.extractor.extractor_id)
        cached = self.memo.get(key)
        if cached is None or len(cached) < len(images):
            cached = [self.extractor.extract(img) for img in images]
            self.memo[key] = cached
        return cached[: len(images)]

    def pool_scores(self, prepared, pool, model_id) -> SimScoreSet:
        return score_pool(prepared, self._pool_features(pool, model_id), model_id)


class SsimScorer:
    """Direct image-structure route on the shared analysis raster."""

    def prepare(self, test: Image) -> Image:
        return resize_to(test, ANALYSIS_SIZE, ANALYSIS_SIZE)

    def pool_scores(self, prepared, pool, model_id) -> SimScoreSet:
        scores = tuple(
            ssim(prepared, resize_to(img, ANALYSIS_SIZE, ANALYSIS_SIZE))
            for img in pool.entries[model_id]
        )
        return SimScoreSet(model_id=model_id, scores=scores)


class CombinedScorer:
    """Mean of feature cosine and SSIM per candidate."""

    def __init__(self, extractor: FeatureExtractor, weight: float = 0.5):
        self.extractor = extractor
        self.weight = weight

    def prepare(self, test: Image) -> Image:
        return test

    def pool_scores(self, prepared, pool, model_id) -> SimScoreSet:
        scores = tuple(
            combined_score(prepared, img, self.extractor, self.weight)
            for img in pool.entries[model_id]
        )
        return SimScoreSet(model_id=model_id, scores=scores)


def make_scorer(
    method: str,
    extractor: Optional[FeatureExtractor] = None,
    memo: Optional[dict] = None,
    weight: float = 0.5,
) -> Scorer:
    if method == "ssim":
        return SsimScorer()
    if extractor is None:
        from .spectral import SpectralExtractor

        extractor = SpectralExtractor()
    if method == "combined":
        return CombinedScorer(extractor, weight)
    return CosineFeatureScorer(extractor, memo)


def attribute(
    image: Image,
    models: Sequence[ModelId],
    config: AttributionConfig,
    *,
    backend: GenerationBackend,
    prompt_source: PromptSource,
    scorer: Optional[Scorer] = None,
) -> AttributionResult:
    """Run the full pipeline and return the ranked verdict.

    Ties in the final scores break toward the lexicographically smaller
    model id. All timing is wall-clock milliseconds per stage.
    """
    model_set = validate_model_set(models)
    if scorer is None:
        scorer = make_scorer(config.method)
    timing = {}
    t_total = time.perf_counter()

    t0 = time.perf_counter()
    prepared = scorer.prepare(image)
    timing["features"] = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    prompt = invert_prompt(image, prompt_source)
    timing["invert_prompt"] = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    pool = generate_pool(prompt, model_set, config.gamma, config.seed, backend)
    timing["generate_pool"] = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    score_sets = {}
    final_scores = {}
    for model_id in model_set:
        ss = scorer.pool_scores(prepared, pool, model_id)
        score_sets[model_id] = ss
        final_scores[model_id] = rank_score(ss, config.scheme)
    timing["scoring"] = (time.perf_counter() - t0) * 1e3

    best = min(final_scores, key=lambda m: (-final_scores[m], m))
    timing["total"] = (time.perf_counter() - t_total) * 1e3
    return AttributionResult(
        best=best,
        final_scores=final_scores,
        score_sets=score_sets,
        scheme=config.scheme,
        timing_ms=timing,
    )


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def prompt_overlap(a: Prompt, b: Prompt) -> float:
    """Jaccard overlap of lowercased alphanumeric tokens; a cheap diagnostic
    for how much of one prompt survives in another."""
    ta = set(_TOKEN_RE.findall(a.text.lower()))
    tb = set(_TOKEN_RE.findall(b.text.lower()))
    union = ta | tb
    if not union:
        return 1.0
    return len(ta & tb) / len(union)
