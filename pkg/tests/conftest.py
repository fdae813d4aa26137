import numpy as np
import pytest

from scenedistill import vit_local


@pytest.fixture
def toy_cfg():
    return vit_local.ViTConfig(image_size=16, patch_size=4, width=16, heads=4,
                               layers=2, embed_dim=8)


@pytest.fixture
def toy_weights(toy_cfg):
    return vit_local.random_weights(toy_cfg, seed=42)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
