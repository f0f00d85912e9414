import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture
def small_dataset():
    """Simulated observational dataset used across estimator tests."""
    from wate.simulation import generate_dataset

    return generate_dataset(2, 250, np.random.default_rng(42))
