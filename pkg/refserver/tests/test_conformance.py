"""Cross-component conformance: the attribution package's gateway client and
synthetic generator against this shim (the client-side package is a test
dependency only; the shim itself never imports it)."""

import numpy as np
import pytest

from conftest import FIXED_PROMPT, RunningShim, registered_image_pixels

from attribkit.attribution import Prompt, PromptOrigin
from attribkit.errors import RemoteError
from attribkit.imagecore import Image
from attribkit.modelgateway import GatewayBackend, GatewayClient, GatewayConfig
from attribkit.synthmodels import SyntheticBackend, make_family, synth_generate
from refserver.app import ShimSettings
from refserver.generator import build_family, render

PROMPT = Prompt(FIXED_PROMPT, PromptOrigin.NATURAL)

# pinned pixels of the default family (same values pin the client package)
GOLDEN_HASHES = {
    "m1": "35f218f32e3d450402daf2c7c4d9182241791ad9dd32c70033abe4ac2a9b83c6",
    "m2": "e7b1c4884ed4cff856f61d3cbb84298f45291fe6aba7a6dc7a22fabf74dc8487",
    "m3": "31d9c197cf68a144ee46f34e2bd4676ce3596a526de91c6ea13a12d7404ce40a",
    "m4": "710991600ee32d34831b1812bcc64d04550ee9fab12425211155455a94ff276e",
}
GOLDEN_PROMPT = Prompt("a quiet harbor at dawn with small boats", PromptOrigin.NATURAL)


def client_for(url):
    return GatewayClient(GatewayConfig(base_url=url, timeout_ms=20_000, retries=1))


class TestCrossDeterminism:
    def test_render_matches_client_generator_bit_for_bit(self):
        family = build_family(2023, 4)
        client_family = make_family(4, 2023)
        for spec in client_family:
            for seed in (0, 7, 123456789):
                ours = render(family[spec.id], PROMPT.text, seed)
                theirs = synth_generate(spec, PROMPT, seed)
                assert np.array_equal(ours, theirs.pixels), (spec.id, seed)

    def test_frozen_golden_hashes(self):
        client_family = make_family(4, 2023)
        for spec in client_family:
            img = Image(render(build_family(2023, 4)[spec.id], GOLDEN_PROMPT.text, 7))
            assert img.content_hash() == GOLDEN_HASHES[spec.id]

    def test_remote_pool_equals_local_pool(self, synthetic_shim):
        remote = GatewayBackend(client_for(synthetic_shim))
        local = SyntheticBackend(make_family(4, 2023))
        for model_id in ("m1", "m4"):
            over_wire = remote.generate(model_id, PROMPT, 3, 2023)
            in_process = local.generate(model_id, PROMPT, 3, 2023)
            assert len(over_wire) == 3
            for a, b in zip(over_wire, in_process):
                assert np.array_equal(a.pixels, b.pixels)


class TestClientConformance:
    def test_generate_roundtrip(self, synthetic_shim):
        images = client_for(synthetic_shim).generate("m1", PROMPT, 2, 9)
        assert len(images) == 2
        assert images[0].width == 256

    def test_caption_roundtrip(self, synthetic_shim):
        got = client_for(synthetic_shim).caption(Image(registered_image_pixels()))
        assert got.text == FIXED_PROMPT
        assert got.source == PromptOrigin.GENERATED

    def test_embed_roundtrip(self, synthetic_shim):
        vec = client_for(synthetic_shim).embed(Image(registered_image_pixels()))
        assert vec.dimension == 64
        assert float(np.linalg.norm(vec.values)) == pytest.approx(1.0, abs=1e-9)

    def test_error_payloads_surface_as_typed_errors(self, synthetic_shim):
        client = client_for(synthetic_shim)
        with pytest.raises(RemoteError) as err:
            client.generate("m99", PROMPT, 1, 0)
        assert err.value.status == 404
        assert err.value.code == "unknown_model"
        other = Image(registered_image_pixels()[::-1].copy())
        with pytest.raises(RemoteError) as err:
            client.caption(other)
        assert err.value.code == "unknown_image"

    def test_auth_required_surface(self):
        with RunningShim(ShimSettings(mode="echo", api_key="k1")) as url:
            unauth = client_for(url)
            with pytest.raises(RemoteError) as err:
                unauth.generate("m", PROMPT, 1, 0)
            assert err.value.status == 401
            authed = GatewayClient(
                GatewayConfig(base_url=url, timeout_ms=20_000, retries=0, api_key="k1")
            )
            assert len(authed.generate("m", PROMPT, 2, 0)) == 2

    def test_end_to_end_attribution_over_the_wire(self, synthetic_shim):
        # full closed loop with the shim as the only generation backend
        from attribkit.attribution import AttributionConfig, KnownPrompt, attribute

        family = make_family(4, 2023)
        test_image = synth_generate(family[2], PROMPT, 31337)
        backend = GatewayBackend(client_for(synthetic_shim))
        result = attribute(
            test_image,
            ["m1", "m2", "m3", "m4"],
            AttributionConfig(gamma=4, seed=2023),
            backend=backend,
            prompt_source=KnownPrompt(PROMPT.text),
        )
        assert result.best == "m3"
