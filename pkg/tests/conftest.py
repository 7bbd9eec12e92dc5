import numpy as np
import pytest

from fpp1d.passage_times import Discrete, Exponential, Uniform
from fpp1d.periodic_graph import build_cylinder, build_line, build_tube


@pytest.fixture(scope="session")
def tube22():
    return build_tube(2, 2)


@pytest.fixture(scope="session")
def line():
    return build_line()


@pytest.fixture(scope="session")
def exp1():
    return Exponential(1.0)


@pytest.fixture(scope="session")
def unif01():
    return Uniform(0.0, 1.0)


@pytest.fixture(scope="session")
def atoms12():
    return Discrete(((1.0, 0.5), (2.0, 0.5)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


CELLS = {
    "line": build_line,
    "tube(2,2)": lambda: build_tube(2, 2),
    "tube(3,2)": lambda: build_tube(3, 2),
    "tube(2,3)": lambda: build_tube(2, 3),
    "cylinder(3,2)": lambda: build_cylinder(3, 2),
}


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
