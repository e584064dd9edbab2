import numpy as np
import pytest

from pcbd.cloud import DEFAULT_FAMILIES, synth_dataset
from pcbd.rng import SeededRng


@pytest.fixture(scope="session")
def small_dataset():
    """16 clouds (2 per family), n=64: enough for plumbing tests."""
    return synth_dataset(DEFAULT_FAMILIES, 2, 64, SeededRng(123))


@pytest.fixture(scope="session")
def medium_dataset():
    """48 clouds, n=256: used by the cheap training smoke tests."""
    return synth_dataset(DEFAULT_FAMILIES, 6, 256, SeededRng(321))


def random_cloud(seed, n=32, scale=0.8):
    gen = np.random.default_rng(seed)
    return np.clip(gen.normal(0.0, scale, size=(n, 3)), -1.0, 1.0)
