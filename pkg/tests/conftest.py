import numpy as np
import pytest

from pathot.core import DiscreteMeasure, make_grid


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid32():
    return make_grid(32)


def random_uniform_measure(rng, n, d, scale=1.0):
    return DiscreteMeasure.uniform(rng.uniform(-scale, scale, size=(n, d)))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
