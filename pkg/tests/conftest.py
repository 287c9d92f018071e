import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dualplan.models import build_double_integrator, build_planar_manipulation

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# filled by the acceptance module; printed once at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def di():
    return build_double_integrator()


@pytest.fixture
def pm():
    return build_planar_manipulation()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
