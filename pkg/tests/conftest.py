from __future__ import annotations

import pytest

from usvlab.config import parse_config
from usvlab.vessel import NOMINAL_PARAMS


@pytest.fixture(scope="session")
def nominal():
    return parse_config("paper_nominal")


@pytest.fixture(scope="session")
def exact():
    return parse_config("exact_formation")


@pytest.fixture(scope="session")
def single_pair():
    return parse_config("single_pair")


@pytest.fixture
def params():
    return NOMINAL_PARAMS


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
