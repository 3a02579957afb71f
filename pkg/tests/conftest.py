import numpy as np
import pytest

from detumble.dynamics import InertiaTensor
from detumble.geomag import load_igrf
from detumble.orbit import AEOLUS

CASE_OMEGA0_DPS = {
    "case1": (2.429286, 2.878490, -0.366780),
    "case2": (-1.576299, -0.246907, 2.778531),
    "case3": (0.047150, -2.486905, -1.425107),
    "case4": (-0.626909, -0.795380, 2.927892),
}


@pytest.fixture(scope="session")
def inertia():
    return InertiaTensor(0.02, 0.03, 0.04)


@pytest.fixture(scope="session")
def orbit():
    return AEOLUS


@pytest.fixture(scope="session")
def igrf():
    return load_igrf()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
