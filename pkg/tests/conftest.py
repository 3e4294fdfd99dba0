"""
Pytest configuration and shared fixtures.

Fixtures defined here are available to every test under tests/. Data
fixtures are seeded so each test sees the same dataset on every run; the
database fixture gives each test a fresh in-memory SQLite store.
"""

import numpy as np
import pytest
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

from nlpmix.models import Base, ModelIndicator, PriorFamily, PriorSpec
from tests.fixtures.test_data import DatasetFactory


# =============================================================================
# CORE FIXTURES - Database Setup
# =============================================================================

@pytest.fixture(scope="function")
def db_session():
    """
    Fresh in-memory database for EACH test function.

    Everything before the yield is setup, everything after it teardown:
    the tables are dropped so no marginal or run record leaks between tests.
    """
    engine = create_engine("sqlite:///:memory:")
    Base.metadata.create_all(engine)

    SessionLocal = sessionmaker(bind=engine)
    session = SessionLocal()

    yield session

    session.close()
    Base.metadata.drop_all(engine)


# =============================================================================
# RANDOMNESS
# =============================================================================

@pytest.fixture
def rng():
    """Seeded generator; tests that need their own stream derive it from a seed."""
    return np.random.default_rng(20240611)


# =============================================================================
# PRIORS
# =============================================================================

@pytest.fixture
def pmom_spec():
    return PriorSpec(family=PriorFamily.PMOM)


@pytest.fixture
def pimom_spec():
    return PriorSpec(family=PriorFamily.PIMOM)


@pytest.fixture
def pemom_spec():
    return PriorSpec(family=PriorFamily.PEMOM)


@pytest.fixture(params=[PriorFamily.PMOM, PriorFamily.PIMOM, PriorFamily.PEMOM], ids=lambda f: f.value)
def nonlocal_spec(request):
    """Runs the test once per non-local family at its default dispersion."""
    return PriorSpec(family=request.param)


# =============================================================================
# DATASETS
# =============================================================================

@pytest.fixture
def two_predictor_full():
    """
    Two correlated predictors (variance 2, covariance 1), n = 1000,
    both coefficients active: theta = (0.5, 1).
    """
    return DatasetFactory.two_predictor((0.5, 1.0), seed=1)


@pytest.fixture
def two_predictor_sparse():
    """Same design with theta = (0, 1): only the second predictor matters."""
    return DatasetFactory.two_predictor((0.0, 1.0), seed=1)


@pytest.fixture
def strong_signal_data():
    """
    n = 120, p = 5, active set {1, 3} with large coefficients.

    Small enough to enumerate all 32 models, strong enough that the true
    model dominates the posterior.
    """
    return DatasetFactory.linear(n=120, theta=(0.0, 1.5, 0.0, -1.0, 0.0), seed=7)


@pytest.fixture
def true_model():
    """Support of strong_signal_data."""
    return ModelIndicator.from_indices([1, 3], 5)


@pytest.fixture
def single_predictor_data():
    """n = 50 draws of y = 0.6 x + e, x and e standard Normal."""
    return DatasetFactory.linear(n=50, theta=(0.6,), seed=3)


# =============================================================================
# PYTEST CONFIGURATION HOOKS
# =============================================================================

def pytest_configure(config):
    """Register custom markers (run a subset with e.g. pytest -m "not slow")."""
    config.addinivalue_line(
        "markers",
        "unit: Unit tests (fast, isolated, no external dependencies)"
    )
    config.addinivalue_line(
        "markers",
        "integration: Integration tests (several services together, statistical checks)"
    )
    config.addinivalue_line(
        "markers",
        "slow: Tests that take longer than a few seconds"
    )
    config.addinivalue_line(
        "markers",
        "database: Tests that require database operations"
    )
    config.addinivalue_line(
        "markers",
        "e2e: End-to-end tests driving the command-line interface"
    )
