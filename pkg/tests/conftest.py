import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cihj.control import BellmanData, solve_dp
from cihj.paths import GridSpec, PathFamily

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def nine_family():
    """n=1, no past, two future steps, alphabet {-1, 0, 1}: nine paths."""
    return PathFamily(GridSpec(h=0.0, T=1.0, n=1, m_past=0, m_fut=2), 1.0, [-1, 0, 1], [0])


@pytest.fixture(scope="session")
def desk_family():
    """Three future steps with a two-interval prehistory: 243 paths on a dyadic grid."""
    return PathFamily(GridSpec(h=0.5, T=0.75, n=1, m_past=2, m_fut=3), 1.0, [-1, 0, 1], [0])


def closed_form_data():
    return BellmanData(((-1.0,), (1.0,)), lambda k, x, u: u, lambda k, x, u: 0.0, lambda x: float(x.at(x.spec.m_fut)[0]))


def state_cost_data(K=4.0):
    return BellmanData(
        ((-1.0,), (1.0,)),
        lambda k, x, u: u,
        lambda k, x, u: K * float(x.at(k)[0]),
        lambda x: float(x.at(x.spec.m_fut)[0]),
    )


@pytest.fixture(scope="session")
def desk_value(desk_family):
    return solve_dp(state_cost_data(), desk_family)
