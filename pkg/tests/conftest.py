import numpy as np
import pytest

from electrofish.geometry import FishSpec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def smooth_density():
    """Random trigonometric polynomial of degree 5 sampled at the mesh parameters."""
    def make(t, seed=0, degree=5):
        r = np.random.default_rng(seed)
        a = r.normal(size=degree + 1)
        b = r.normal(size=degree + 1)
        k = np.arange(degree + 1)
        return np.cos(np.outer(t, k)) @ a + np.sin(np.outer(t, k)) @ b
    return make


@pytest.fixture
def fish_pair():
    return FishSpec(center=(0.0, 0.0)), FishSpec(center=(1.0, 2.5))
