import numpy as np
import pytest

from fednoniid.datasets import Dataset, make_synthetic


@pytest.fixture(scope="session")
def small_train() -> Dataset:
    return make_synthetic(300, seed=11)


@pytest.fixture(scope="session")
def small_test() -> Dataset:
    return make_synthetic(120, seed=12)


@pytest.fixture(scope="session")
def tiny_balanced() -> Dataset:
    """10 classes x 10 samples of 4x4 images; labels cycle 0..9."""
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(100, 4, 4, 1), dtype=np.uint8)
    labels = np.arange(100, dtype=np.int64) % 10
    return Dataset("SYNTHETIC", images, labels, 10)
