import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_decaying(rng, n, sigma=1.0, delta=0.5, density=1.0):
    """Dense random matrix with sub-exponential off-diagonal decay."""
    idx = np.arange(n)
    d = np.abs(idx[:, None] - idx[None, :])
    M = rng.uniform(-1, 1, (n, n)) * np.exp(-(d / sigma) ** delta)
    if density < 1:
        M *= rng.random((n, n)) < density
    return M


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
