import numpy as np
import pytest

from choquard.grid import DomainSpec, build_grid
from choquard.riesz import build_kernel

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def disk():
    return DomainSpec.ball((0.0, 0.0), 1.0)


@pytest.fixture(scope="session")
def annulus():
    return DomainSpec.annulus((0.0, 0.0), 0.4, 1.0)


@pytest.fixture(scope="session")
def disk16(disk):
    return build_grid(disk, 16)


@pytest.fixture(scope="session")
def disk32(disk):
    return build_grid(disk, 32)


@pytest.fixture(scope="session")
def annulus27(annulus):
    return build_grid(annulus, 27)


@pytest.fixture(scope="session")
def kernel16(disk16):
    return build_kernel(disk16, 1.0)


@pytest.fixture(scope="session")
def kernel_ann(annulus27):
    return build_kernel(annulus27, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
