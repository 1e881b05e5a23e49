import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cmcfoliate import ambient
from cmcfoliate.cmc import solve_cmc, trace_foliation
from cmcfoliate.surface import EmbeddedSphere

settings.register_profile(
    "default", max_examples=20, deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def schwarzschild_sigma(r, m=1.0):
    """Mean-curvature radius of the isotropic coordinate sphere |x| = r."""
    phi = 1 + m / (2 * r)
    return r * phi**3 / (1 - m / (2 * r))


@pytest.fixture(scope="session")
def schwarzschild():
    return ambient.schwarzschild(1.0)


@pytest.fixture(scope="session")
def schwarzschild_foliation(schwarzschild):
    return trace_foliation(schwarzschild, 20.0, 200.0)


@pytest.fixture(scope="session")
def schwarzschild_leaf50(schwarzschild):
    return solve_cmc(schwarzschild, 50.0, EmbeddedSphere.round(48.0, 24))


@pytest.fixture(scope="session")
def euclidean_leaf():
    return solve_cmc(ambient.euclidean(), 10.0, EmbeddedSphere.round(10.0, 24))


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)
