import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bbm.synth import SynthConfig, simulate_population

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", max_examples=300, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_pop():
    """Eight subjects, Q=3 networks on 300 locations, two sessions each."""
    return simulate_population(SynthConfig(Q=3, V=300, T=200, n_subjects=8, noise_sd=0.5, rng_seed=3))
