import sys

import numpy as np
import pytest

from helmlod.fem import DofSpace
from helmlod.interpolation import CLEMENT, PROJECTIVE, build_transfer
from helmlod.mesh import DEFAULT_SCATTERER, build_interval_mesh, build_square_mesh, refine_times


def make_pair(coarse_mesh, levels, kind=CLEMENT):
    fine_mesh = refine_times(coarse_mesh, levels)
    return build_transfer(DofSpace(coarse_mesh), DofSpace(fine_mesh), kind)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=[CLEMENT, PROJECTIVE])
def kind(request):
    return request.param


@pytest.fixture
def pair_1d():
    return make_pair(build_interval_mesh(8), 3)


@pytest.fixture
def pair_2d():
    return make_pair(build_square_mesh(4), 2)


@pytest.fixture
def pair_2d_scatter():
    return make_pair(build_square_mesh(4, DEFAULT_SCATTERER), 2)


def random_complex(rng, n):
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "CRITERIA_LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip("."))):
            terminalreporter.write_line(line)
