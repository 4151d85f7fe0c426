import numpy as np
import pytest

from specfactor.field import two_source_model
from specfactor.grid import build_grid


@pytest.fixture(scope="session")
def grid32():
    return build_grid(2, 32)


@pytest.fixture(scope="session")
def model():
    return two_source_model()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
