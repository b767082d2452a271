import sys
from pathlib import Path

import numpy as np
import pytest

from infoattr import Image

sys.path.insert(0, str(Path(__file__).parent))  # make `oracles` / fixture helpers importable


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_image(rng, height=16, width=16, channels=1) -> Image:
    return Image(rng.integers(0, 256, size=(height, width, channels), dtype=np.uint8))


def noise_images(rng, count, height=24, width=24, channels=1) -> list[Image]:
    return [random_image(rng, height, width, channels) for _ in range(count)]
