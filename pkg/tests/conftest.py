import numpy as np
import pytest

from anyband.descriptors import sample_random_descriptor
from anyband.encoder import EncoderWeights, SpectralStack


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def encoder_weights():
    return EncoderWeights.create(np.random.default_rng(7))


def random_stack(rng, n_bands, h=8, w=8, with_mask=False):
    descriptors = [sample_random_descriptor(rng) for _ in range(n_bands)]
    planes = rng.uniform(0.0, 1.2, size=(n_bands, h, w)).astype(np.float32)
    mask = None
    if with_mask:
        mask = (rng.uniform(size=(h, w)) < 0.4).astype(np.uint8)
    return SpectralStack(descriptors, planes, mask)
