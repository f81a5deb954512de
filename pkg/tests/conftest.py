import numpy as np
import pytest

from pcqa import ModelConfig, PointCloud, PreprocessConfig, init_params


def random_cloud(rng, n, name="cloud"):
    """Random cloud with float32-representable coordinates (file precision)."""
    positions = rng.uniform(-10, 10, (n, 3)).astype(np.float32).astype(np.float64)
    colors = rng.integers(0, 256, (n, 3)).astype(np.float64)
    return PointCloud(positions, colors, name=name)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_model_cfg():
    return ModelConfig(k=3, layer_dims=(4, 4, 8), embed_dim=16, num_heads=2,
                       ff_dim=16, regressor_hidden=8)


@pytest.fixture
def tiny_pre_cfg():
    return PreprocessConfig(num_partitions=2, patch_size=16, seed=1)


def noised_params(cfg, seed=0, scale=0.05):
    """Init params then move them off exact-zero kink points of max/leaky-relu."""
    params = init_params(cfg, seed=seed)
    nrng = np.random.default_rng(seed + 1000)
    for t in params.named_tensors().values():
        t.data = t.data + nrng.normal(0.0, scale, t.data.shape)
    return params
