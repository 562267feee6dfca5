import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from edgecough.fixtures import fixture_models, gen_session

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def session3():
    return gen_session(seed=42, n_events=3, duration=10.0, noise=0.0)


@pytest.fixture(scope="session")
def models():
    return fixture_models()


@pytest.fixture
def fixture_dir(tmp_path):
    from edgecough.fixtures import write_fixture

    paths = write_fixture(tmp_path / "fx", seed=42)
    return paths
