import numpy as np
import pytest

from ctview.synth import generate_synthetic_dataset
from ctview.volume import LabelVolume, ScalarVolume


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def phantom_pair():
    """One positive and one negative phantom with ground-truth masks."""
    cases = generate_synthetic_dataset(4, seed=7)
    pos = next(c for c in cases if c.label == 1)
    neg = next(c for c in cases if c.label == 0)
    return pos, neg


def random_scalar_volume(rng, shape=(5, 6, 7), spacing=(1.0, 1.0, 1.0),
                         lo=-1000.0, hi=400.0):
    data = rng.uniform(lo, hi, size=shape).astype(np.float32)
    return ScalarVolume(data, spacing)


def random_label_volume(rng, shape=(5, 6, 7), spacing=(1.0, 1.0, 1.0)):
    labels = rng.integers(0, 3, size=shape).astype(np.uint8)
    return LabelVolume(labels, spacing)
