import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# keep POT from importing heavyweight deep-learning backends during tests
for _name in ("PYTORCH", "TENSORFLOW", "JAX", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_name}", "1")

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


@pytest.fixture
def fixtures_dir():
    return FIXTURES
