from __future__ import annotations

import numpy as np
import pytest

from bubbly_honeycomb.lattice import DEFAULT_LATTICE_CONSTANT, build_geometry
from bubbly_honeycomb.operators import CrystalConfig, TruncationParams

DILUTE = (0.02, 1.0 / 9000.0)
NON_DILUTE = (0.2, 1.0e-3)


@pytest.fixture(scope="session")
def geom():
    return build_geometry(DEFAULT_LATTICE_CONSTANT)


def make_case(radius, delta):
    return CrystalConfig(radius, delta), TruncationParams.default_for(radius)


@pytest.fixture(scope="session")
def dilute():
    return make_case(*DILUTE)


@pytest.fixture(scope="session")
def non_dilute():
    return make_case(*NON_DILUTE)


@pytest.fixture(scope="session", params=["dilute", "non_dilute"])
def case(request):
    return make_case(*(DILUTE if request.param == "dilute" else NON_DILUTE))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance(request):
    """Record one ``PASS``/``FAIL`` line per acceptance criterion."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(label, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} {label}: {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
