import math

import numpy as np
import pytest

from vmkit.core import PhaseSpaceGrid
from vmkit.dispersion import build_growing_mode, purely_growing_root
from vmkit.equilibria import make_profile, marginalize

# reference experiment: two bumps at +-2 e1, width 1/2, box M = 20
M_REF = 20.0
K_REF = 2 * math.pi / M_REF

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def bump2():
    return make_profile("double_bump", {"a": 2.0, "sigma": 0.5}, dv=2)


@pytest.fixture(scope="session")
def bump1():
    return make_profile("double_bump", {"a": 2.0, "sigma": 0.5}, dv=1)


@pytest.fixture(scope="session")
def root_ref(bump2):
    return purely_growing_root(marginalize(bump2), K_REF)


@pytest.fixture(scope="session")
def grid16(bump2):
    return PhaseSpaceGrid(M_REF, 16, 2, 64, bump2.vmax_decay)


@pytest.fixture(scope="session")
def grid32(bump2):
    return PhaseSpaceGrid(M_REF, 32, 2, 64, bump2.vmax_decay)


@pytest.fixture(scope="session")
def mode16(root_ref, bump2, grid16):
    return build_growing_mode(root_ref, bump2, grid16)


@pytest.fixture(scope="session")
def mode32(root_ref, bump2, grid32):
    return build_growing_mode(root_ref, bump2, grid32)


@pytest.fixture
def record_line():
    def add(n, ok, detail):
        ACCEPTANCE_LINES.append(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        print(ACCEPTANCE_LINES[-1])
    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def rng(seed=0):
    return np.random.default_rng(seed)
