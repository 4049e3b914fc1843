import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attribkit.attribution import (
    AttributionConfig,
    KnownPrompt,
    Prompt,
    PromptOrigin,
    RankScheme,
    attribute,
    generate_pool,
    invert_prompt,
    make_scorer,
    prompt_overlap,
    rank_score,
    validate_model_set,
)
from attribkit.errors import (
    EmptyScores,
    GenerationFailed,
    InvalidParam,
    PromptUnavailable,
)
from attribkit.similarity import SimScoreSet
from attribkit.synthmodels import SyntheticBackend, synth_generate

from conftest import random_image

PROMPT = Prompt("a narrow bridge near the coast with stone arches", PromptOrigin.NATURAL)


class TestRankScheme:
    def test_parse(self):
        assert RankScheme.parse("avg") == RankScheme.AVG
        assert RankScheme.parse("BEST") == RankScheme.BEST
        assert RankScheme.parse("avg+best") == RankScheme.AVG_BEST
        assert RankScheme.parse("avg-best") == RankScheme.AVG_BEST
        with pytest.raises(InvalidParam):
            RankScheme.parse("median")

    def test_documented_examples(self):
        ss = SimScoreSet("m", (0.2, 0.4, 0.6))
        assert rank_score(ss, RankScheme.AVG) == pytest.approx(0.4)
        assert rank_score(ss, RankScheme.BEST) == pytest.approx(0.6)
        assert rank_score(ss, RankScheme.AVG_BEST) == pytest.approx(0.5)

    def test_empty_scores(self):
        with pytest.raises(EmptyScores):
            rank_score(SimScoreSet("m", ()), RankScheme.AVG)

    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=50))
    @settings(max_examples=300, deadline=None)
    def test_scheme_ordering(self, scores):
        ss = SimScoreSet("m", tuple(scores))
        avg = rank_score(ss, RankScheme.AVG)
        avg_best = rank_score(ss, RankScheme.AVG_BEST)
        best = rank_score(ss, RankScheme.BEST)
        assert avg <= avg_best + 1e-12
        assert avg_best <= best + 1e-12
        if len(set(scores)) == 1:
            assert avg == pytest.approx(best)
        elif max(scores) > min(scores):
            assert avg < best


class TestPromptPlumbing:
    def test_known_prompt_identity(self, rng):
        got = invert_prompt(random_image(rng), KnownPrompt("a city street"))
        assert got.text == "a city street"
        assert got.source == PromptOrigin.NATURAL

    def test_known_prompt_missing(self, rng):
        with pytest.raises(PromptUnavailable):
            invert_prompt(random_image(rng), KnownPrompt(None))

    def test_empty_prompt_rejected(self):
        with pytest.raises(InvalidParam):
            Prompt("", PromptOrigin.NATURAL)

    def test_overlap_identical(self):
        assert prompt_overlap(PROMPT, PROMPT) == 1.0

    def test_overlap_disjoint(self):
        a = Prompt("red apple", PromptOrigin.NATURAL)
        b = Prompt("blue sky", PromptOrigin.NATURAL)
        assert prompt_overlap(a, b) == 0.0

    def test_overlap_set_arithmetic(self):
        a = Prompt("a big city", PromptOrigin.NATURAL)
        b = Prompt("big city lights", PromptOrigin.NATURAL)
        assert prompt_overlap(a, b) == pytest.approx(0.5)

    def test_overlap_punctuation_and_case(self):
        a = Prompt("A Big, City!", PromptOrigin.NATURAL)
        b = Prompt("a big city", PromptOrigin.NATURAL)
        assert prompt_overlap(a, b) == 1.0


class TestModelSet:
    def test_valid(self):
        assert validate_model_set(["m1", "m2"]) == ("m1", "m2")

    def test_empty_or_dup(self):
        with pytest.raises(InvalidParam):
            validate_model_set([])
        with pytest.raises(InvalidParam):
            validate_model_set(["a", "a"])
        with pytest.raises(InvalidParam):
            validate_model_set([""])


class TestGeneratePool:
    def test_counts_and_reproducibility(self, small_family):
        backend = SyntheticBackend(small_family)
        models = [s.id for s in small_family]
        pool_a = generate_pool(PROMPT, models, 5, 2023, backend)
        pool_b = generate_pool(PROMPT, models, 5, 2023, backend)
        assert pool_a.gamma == 5
        assert set(pool_a.entries) == set(models)
        for m in models:
            assert len(pool_a.entries[m]) == 5
            for ia, ib in zip(pool_a.entries[m], pool_b.entries[m]):
                assert np.array_equal(ia.pixels, ib.pixels)

    def test_gamma_one_single_model(self, small_family):
        backend = SyntheticBackend(small_family)
        pool = generate_pool(PROMPT, ["m1"], 1, 99, backend)
        direct = synth_generate(small_family[0], PROMPT, __import__("attribkit.detrng", fromlist=["image_seed"]).image_seed(99, "m1", 0))
        assert np.array_equal(pool.entries["m1"][0].pixels, direct.pixels)

    def test_failure_aborts_whole_pool(self, small_family):
        backend = SyntheticBackend(small_family)
        with pytest.raises(GenerationFailed):
            generate_pool(PROMPT, ["m1", "ghost"], 2, 1, backend)

    def test_bad_gamma(self, small_family):
        backend = SyntheticBackend(small_family)
        with pytest.raises(InvalidParam):
            generate_pool(PROMPT, ["m1"], 0, 1, backend)

    def test_count_mismatch_detected(self):
        class ShortBackend:
            def generate(self, model_id, prompt, n, seed):
                return []

        with pytest.raises(GenerationFailed):
            generate_pool(PROMPT, ["m1"], 2, 1, ShortBackend())


class TestAttribute:
    def _run(self, small_family, image, models=None, **kw):
        backend = SyntheticBackend(small_family)
        config = AttributionConfig(gamma=kw.pop("gamma", 4), scheme=kw.pop("scheme", RankScheme.BEST), seed=kw.pop("seed", 2023))
        return attribute(
            image,
            models or [s.id for s in small_family],
            config,
            backend=backend,
            prompt_source=KnownPrompt(PROMPT.text),
            **kw,
        )

    def test_single_model_degenerate(self, small_family, rng):
        result = self._run(small_family, random_image(rng, 64, 64), models=["m3"])
        assert result.best == "m3"

    def test_closed_loop_recovers_generator(self, small_family):
        # the generator is ground truth: an image from m2 must attribute to m2
        img = synth_generate(small_family[1], PROMPT, 424242)
        result = self._run(small_family, img)
        assert result.best == "m2"

    def test_pool_size_coherence_and_result_shape(self, small_family, rng):
        result = self._run(small_family, random_image(rng, 32, 32), gamma=3)
        assert set(result.score_sets) == {"m1", "m2", "m3", "m4"}
        for ss in result.score_sets.values():
            assert len(ss) == 3
        assert set(result.final_scores) == set(result.score_sets)
        assert result.best == min(result.final_scores, key=lambda m: (-result.final_scores[m], m))
        assert set(result.timing_ms) >= {"features", "invert_prompt", "generate_pool", "scoring", "total"}

    def test_deterministic(self, small_family):
        img = synth_generate(small_family[0], PROMPT, 5)
        a = self._run(small_family, img)
        b = self._run(small_family, img)
        assert a.best == b.best
        assert a.final_scores == b.final_scores
        assert all(a.score_sets[m].scores == b.score_sets[m].scores for m in a.score_sets)

    def test_tie_break_lexicographic(self):
        class ConstantScorer:
            def prepare(self, test):
                return None

            def pool_scores(self, prepared, pool, model_id):
                return SimScoreSet(model_id, (0.5,) * pool.gamma)

        class OnePixel:
            def generate(self, model_id, prompt, n, seed):
                return [random_image(np.random.default_rng(0), 4, 4) for _ in range(n)]

        img = random_image(np.random.default_rng(1), 4, 4)
        result = attribute(
            img,
            ["zeta", "alpha", "midl"],
            AttributionConfig(gamma=2),
            backend=OnePixel(),
            prompt_source=KnownPrompt("x"),
            scorer=ConstantScorer(),
        )
        assert result.best == "alpha"

    def test_argmax_invariant_under_positive_scaling(self, small_family):
        img = synth_generate(small_family[2], PROMPT, 17)
        result = self._run(small_family, img)
        for c in (0.5, 3.0, 1e6):
            scaled = {m: c * s for m, s in result.final_scores.items()}
            assert min(scaled, key=lambda m: (-scaled[m], m)) == result.best

    def test_result_as_dict_round(self, small_family):
        img = synth_generate(small_family[0], PROMPT, 3)
        d = self._run(small_family, img).as_dict()
        assert d["best"] == "m1"
        assert d["scheme"] == "best"
        assert len(d["score_sets"]["m1"]) == 4

    def test_score_prefix_across_gammas(self, small_family):
        # pools are index-seeded, so small-gamma scores are a prefix of large-gamma
        img = synth_generate(small_family[0], PROMPT, 5)
        small = self._run(small_family, img, gamma=3)
        large = self._run(small_family, img, gamma=8)
        for m in ("m1", "m2", "m3", "m4"):
            assert large.score_sets[m].scores[:3] == small.score_sets[m].scores

    def test_prompt_unavailable_propagates(self, small_family, rng):
        backend = SyntheticBackend(small_family)
        with pytest.raises(PromptUnavailable):
            attribute(
                random_image(rng),
                ["m1"],
                AttributionConfig(gamma=1),
                backend=backend,
                prompt_source=KnownPrompt(None),
            )


class TestScorerFactory:
    def test_all_methods_produce_scores(self, small_family):
        img = synth_generate(small_family[0], PROMPT, 9)
        backend = SyntheticBackend(small_family)
        for method in ("spectral", "ssim", "combined"):
            result = attribute(
                img,
                ["m1", "m2"],
                AttributionConfig(gamma=2, method=method),
                backend=backend,
                prompt_source=KnownPrompt(PROMPT.text),
                scorer=make_scorer(method),
            )
            assert set(result.score_sets) == {"m1", "m2"}

    def test_memo_reuses_pool_features(self, small_family):
        from attribkit.spectral import SpectralExtractor

        calls = {"n": 0}

        class CountingExtractor(SpectralExtractor):
            def extract(self, image):
                calls["n"] += 1
                return super().extract(image)

        memo = {}
        scorer = make_scorer("spectral", extractor=CountingExtractor(), memo=memo)
        backend = SyntheticBackend(small_family)
        img = synth_generate(small_family[0], PROMPT, 9)
        config = AttributionConfig(gamma=3, seed=2023)
        attribute(img, ["m1"], config, backend=backend, prompt_source=KnownPrompt(PROMPT.text), scorer=scorer)
        first = calls["n"]  # 1 test + 3 pool
        attribute(img, ["m1"], config, backend=backend, prompt_source=KnownPrompt(PROMPT.text), scorer=scorer)
        assert calls["n"] == first + 1  # only the test image is re-extracted
