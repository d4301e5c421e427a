import numpy as np
import pytest

from delaybismut.model import DiffusionSpec, DriftSpec, ModelSpec, TestFunctional
from delaybismut.pathsim import SegmentPath, make_grid

ACCEPTANCE_LINES = []


def scalar_linear(lam=-1.0, B0=0.0, B1=0.5, s=0.3, tau=1.0):
    return ModelSpec([lam], tau, DriftSpec.linear_delay(1, B0, B1), DiffusionSpec.constant(1, s))


def nonlinear_d(d=2, noise="additive", s0=1.0, s1=0.5, S=0.5):
    lam = -np.arange(1, d + 1, dtype=float)
    drift = DriftSpec.bounded_nonlinear(d, G0=0.5, G1=0.3, delay_weights=[(-0.5, 0.2)])
    if noise == "additive":
        diff = DiffusionSpec.constant(d, S)
    else:
        diff = DiffusionSpec.diagonal_saturating(d, s0, s1)
    return ModelSpec(lam, 1.0, drift, diff, noise_kind=noise)


@pytest.fixture
def small_grid():
    return make_grid(1.0, 2.0, 20)


@pytest.fixture
def linear_model():
    return scalar_linear()


def const_seg(grid, value):
    return SegmentPath.constant(grid, value)


def smooth_f(d, v_mid=False):
    v = np.linspace(1.0, 0.5, d)
    return TestFunctional("bounded_smooth", v, v * 0.5 if v_mid else None)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
