import numpy as np
import pytest

from attribkit.imagecore import Image


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, width=32, height=32, channels=3) -> Image:
    return Image(rng.integers(0, 256, (height, width, channels), dtype=np.uint8))


def constant_image(value, width=16, height=16, channels=3) -> Image:
    return Image(np.full((height, width, channels), value, dtype=np.uint8))


@pytest.fixture
def small_family():
    from attribkit.synthmodels import make_family

    return make_family(4, 2023)
