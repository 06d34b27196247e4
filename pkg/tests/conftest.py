import math

import numpy as np
import pytest

from nonlocal_dispersion import BaseKernel, ScaledKernel, TorusGrid, assemble

ACCEPTANCE_LINES = {}


def record(criterion, passed, detail):
    """Store a one-line verdict for the acceptance summary."""
    ACCEPTANCE_LINES[criterion] = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[criterion])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def tent_beta(k):
    """Closed form for the torus tent kernel at eps=1, m=0."""
    return 0.0 if k == 0 else 24.0 * (1.0 - math.cos(k)) / k**2 - 12.0


@pytest.fixture(scope="session")
def tent():
    return BaseKernel.tent()


@pytest.fixture(scope="session")
def tent_periodic(tent):
    return ScaledKernel(tent, 1.0, 0.0, "periodic")


@pytest.fixture(scope="session")
def torus256():
    return TorusGrid(256)


@pytest.fixture(scope="session")
def op256(tent_periodic, torus256):
    return assemble(tent_periodic, torus256)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
