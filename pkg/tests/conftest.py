import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from randeig.analysis import ExperimentConfig, build_setup  # noqa: E402

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_REPORT: list[str] = []


@pytest.fixture(scope="session")
def report():
    """Collects one line per acceptance criterion; echoed in the terminal summary."""
    def add(line: str) -> None:
        _REPORT.append(line)
        print(line)
    return add


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def beam10():
    return build_setup(ExperimentConfig(cov=0.10))


@pytest.fixture(scope="session")
def beam25():
    return build_setup(ExperimentConfig(cov=0.25))


@pytest.fixture(scope="session")
def plate25():
    return build_setup(ExperimentConfig(model="plate", cov=0.25))
