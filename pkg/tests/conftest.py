import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def random_distribution(space, rng, floor=0.01):
    """Strictly positive random tabular distribution (floor avoids zero mass)."""
    from ratiodiff.tabular import distribution_from_weights

    w = rng.uniform(size=space.n_states) + floor
    return distribution_from_weights(space, w)
