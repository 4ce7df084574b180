import numpy as np
import pytest

from ustrans.frames import Domain, EnvelopeImage


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def speckle_frame(rng):
    """A generic positive frame with speckle-like texture."""
    samples = rng.gamma(2.0, 0.2, size=(64, 64)).astype(np.float32)
    samples /= samples.max()
    return EnvelopeImage(samples, axial_spacing=0.2, lateral_spacing=0.2,
                         domain_tag=Domain.PHASED)


def make_frame(samples, spacing=0.2, domain=Domain.PHASED, index=0):
    return EnvelopeImage(np.asarray(samples, dtype=np.float32),
                         axial_spacing=spacing, lateral_spacing=spacing,
                         domain_tag=domain, frame_index=index)
