import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ddmhe.experiments import scalar_system, sea_system
from helpers import ACCEPTANCE_LINES

settings.register_profile(
    "default", max_examples=50, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def sea():
    return sea_system()


@pytest.fixture
def scalar():
    return scalar_system()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
