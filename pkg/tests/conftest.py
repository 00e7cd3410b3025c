import numpy as np
import pytest
from hypothesis import settings

import acceptance_log
from tcflow import _hermitian as herm
from tcflow.grid import PeriodicGrid

settings.register_profile("tcflow", deadline=None, max_examples=15, derandomize=True)
settings.load_profile("tcflow")


def scaled(grid, f, margin):
    """Rescale f so that min eig(I + i ddbar f) = margin."""
    low = herm.min_eig(grid.holo_hessian(f)).min()
    return f * (1.0 - margin) / (-low)


@pytest.fixture(scope="session")
def grid1():
    return PeriodicGrid(1, 32)


@pytest.fixture(scope="session")
def grid2():
    return PeriodicGrid(2, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not acceptance_log.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(acceptance_log.LINES):
        terminalreporter.write_line(acceptance_log.LINES[k])
