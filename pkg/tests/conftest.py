import numpy as np
import pytest


@pytest.fixture
def make_rng():
    """Counter-based generator factory so every test pins its own stream."""

    def _make(seed=0):
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))

    return _make
