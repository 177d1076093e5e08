import numpy as np
import pytest

from leafcv.imaging import ImageBuffer


def assert_valid_image(img):
    assert isinstance(img, ImageBuffer)
    px = img.pixels
    assert px.ndim == 3 and px.shape[2] in (1, 3)
    assert img.data.size == img.width * img.height * img.channels
    assert np.all(np.isfinite(px)) and px.min() >= 0.0 and px.max() <= 1.0


def random_image(rng, h, w, c=1):
    return ImageBuffer(rng.random((h, w, c)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
