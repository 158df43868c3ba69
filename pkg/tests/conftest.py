import numpy as np
import pytest

from vitret.config import ModelConfig
from vitret.data import synthetic_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset():
    return synthetic_dataset(num_classes=2, samples_per_class=4, T=4, H=8, W=8, seed=3)


@pytest.fixture
def small_config():
    return ModelConfig(sequence_length=4, image_height=8, image_width=8, projection_dim=8, dense_dim=16,
                       num_heads=2, patch_size=4, lstm_units=6, epochs=2)
