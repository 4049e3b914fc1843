"""Training-free attribution of generated images.

Given a test image and a set of candidate text-to-image models, the pipeline
recovers a prompt, regenerates candidate images from every model, and ranks
models by feature similarity; the model whose candidates resemble the test
image most is reported as the source.
"""

from .attribution import (
    AttributionConfig,
    AttributionResult,
    CandidatePool,
    KnownPrompt,
    Prompt,
    PromptOrigin,
    RankScheme,
    attribute,
    generate_pool,
    invert_prompt,
    prompt_overlap,
    rank_score,
)
from .imagecore import ANALYSIS_SIZE, AttackConfig, AttackKind, Image, load_image, save_image
from .similarity import FeatureVector, SimScoreSet, cosine_similarity, combined_score, score_pool, ssim
from .spectral import RapsProfile, Spectrum2D, average_spectrum, magnitude_spectrum, raps, spectral_features
from .synthmodels import PromptRegistry, SyntheticBackend, make_family, synth_generate

__version__ = "0.1.0"

__all__ = [
    "ANALYSIS_SIZE",
    "AttackConfig",
    "AttackKind",
    "AttributionConfig",
    "AttributionResult",
    "CandidatePool",
    "FeatureVector",
    "Image",
    "KnownPrompt",
    "Prompt",
    "PromptOrigin",
    "PromptRegistry",
    "RankScheme",
    "RapsProfile",
    "SimScoreSet",
    "Spectrum2D",
    "SyntheticBackend",
    "attribute",
    "average_spectrum",
    "combined_score",
    "cosine_similarity",
    "generate_pool",
    "invert_prompt",
    "load_image",
    "magnitude_spectrum",
    "make_family",
    "prompt_overlap",
    "rank_score",
    "raps",
    "save_image",
    "score_pool",
    "spectral_features",
    "ssim",
    "synth_generate",
    "__version__",
]
