import sys

import numpy as np
import pytest

from sbse.schedule import build_symmetric
from sbse.spectral import SpectralParams


@pytest.fixture(scope="session")
def schedule():
    return build_symmetric()


@pytest.fixture(scope="session")
def params():
    return SpectralParams()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_complex(rng, shape, scale=1.0):
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
