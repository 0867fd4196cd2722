import numpy as np
import pytest

from artifact_guidance.detector import DetectorSpec
from artifact_guidance.models import DecoderSpec, MixtureSpec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_mode():
    return MixtureSpec([0.5, 0.5], [[-2.0, 0.0], [2.0, 0.0]], [0.5, 0.5])


@pytest.fixture
def point_mass():
    return MixtureSpec([1.0], [[1.0, -0.5]], [0.0])


@pytest.fixture
def identity_2d():
    return DecoderSpec("identity", 1, 2)


@pytest.fixture
def radial_2d():
    return DetectorSpec("radial", centers=([2.0, 0.0],), radii=(1.0,))
