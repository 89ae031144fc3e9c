import numpy as np
import pytest


def random_spd(rng, d, jitter=0.5):
    """Well-conditioned random symmetric positive-definite matrix."""
    a = rng.normal(size=(d, d))
    return a @ a.T / d + jitter * np.eye(d)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
