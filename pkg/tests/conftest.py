import numpy as np
import pytest

from relbohm import InterferometerConfig, ScanGrid, analytic_weak_values, default_plates


@pytest.fixture(scope="session")
def config():
    return InterferometerConfig.default()


@pytest.fixture(scope="session")
def grid():
    return ScanGrid()


@pytest.fixture(scope="session")
def truth(config, grid):
    return analytic_weak_values(config, grid)


@pytest.fixture(scope="session")
def plates():
    return default_plates()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    lines = test_acceptance.summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
