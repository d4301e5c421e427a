import math

import numpy as np
import pytest
from scipy.linalg import expm

from conftest import nonlinear_d, scalar_linear, smooth_f
from delaybismut.mc import MCConfig
from delaybismut.model import DiffusionSpec, DriftSpec, ModelSpec, TestFunctional
from delaybismut.oracles import (
    additive_h,
    analytic_linear_gradient,
    default_epsilon,
    delay_ode_solution,
    fd_gradient,
    ibp_residual,
    multiplicative_h,
    pathwise_gradient,
    zero_h,
)
from delaybismut.pathsim import SegmentPath, make_grid
from delaybismut.sensitivity import control_function


def test_default_epsilon():
    g = make_grid(1.0, 2.0, 10)
    assert default_epsilon(SegmentPath.constant(g, [4.0]), SegmentPath.constant(g, [2.0])) == pytest.approx(2e-3)
    assert default_epsilon(SegmentPath.constant(g, [0.1]), SegmentPath.constant(g, [0.5])) == pytest.approx(2e-3)


def test_fd_trivial_and_exact_linearity():
    spec = scalar_linear()
    g = make_grid(1.0, 2.0, 20)
    xi, eta = SegmentPath.constant(g, [1.0]), SegmentPath.constant(g, [1.0])
    mc = MCConfig(200, seed=1)
    const = TestFunctional("linear_endpoint", [0.0], offset=1.0)
    assert fd_gradient(spec, g, xi, eta, const, mc).value == 0.0
    lin = TestFunctional("linear_endpoint", [1.0])
    a = fd_gradient(spec, g, xi, eta, lin, mc, eps=1e-2).value
    b = fd_gradient(spec, g, xi, eta, lin, mc, eps=1e-4).value
    assert a == pytest.approx(b, abs=1e-10)


def test_fd_richardson_consistency():
    spec = nonlinear_d(2, "multiplicative")
    g = make_grid(1.0, 2.0, 20)
    xi, eta = SegmentPath.constant(g, [0.3, 0.3]), SegmentPath.constant(g, [1.0, 1.0])
    f, mc = smooth_f(2), MCConfig(2000, seed=2)
    a = fd_gradient(spec, g, xi, eta, f, mc, eps=1e-2).value
    b = fd_gradient(spec, g, xi, eta, f, mc, eps=1e-3).value
    c = fd_gradient(spec, g, xi, eta, f, mc, eps=1e-4).value
    # common paths: the differences are the deterministic O(eps^2) bias
    assert abs(a - c) == pytest.approx(abs(a - b) * 1.0101, rel=0.05)
    assert abs(a - b) < 1e-3


def test_crn_reduces_variance():
    spec = nonlinear_d(2, "multiplicative")
    g = make_grid(1.0, 2.0, 20)
    xi, eta = SegmentPath.constant(g, [0.3, 0.3]), SegmentPath.constant(g, [1.0, 1.0])
    f, mc = smooth_f(2), MCConfig(4000, seed=3)
    crn = fd_gradient(spec, g, xi, eta, f, mc, eps=1e-2, crn=True)
    ind = fd_gradient(spec, g, xi, eta, f, mc, eps=1e-2, crn=False)
    assert crn.std_error < ind.std_error / 10


def test_pathwise_trivial_and_closed_form():
    spec = ModelSpec([-1.0, -2.0], 1.0, DriftSpec.linear_delay(2), DiffusionSpec.constant(2, 0.4))
    g = make_grid(1.0, 2.0, 20)
    xi, eta = SegmentPath.constant(g, [0.5, 0.5]), SegmentPath.constant(g, [1.0, -1.0])
    mc = MCConfig(50, seed=4)
    assert pathwise_gradient(spec, g, xi, eta, TestFunctional("linear_endpoint", [0.0, 0.0], offset=1.0), mc).value == 0.0
    v = np.array([2.0, 1.0])
    est = pathwise_gradient(spec, g, xi, eta, TestFunctional("linear_endpoint", v), mc)
    assert est.value == pytest.approx(float(v @ (np.exp(2.0 * spec.lam) * [1.0, -1.0])), rel=1e-13)
    assert est.std_error < 1e-15
    with pytest.raises(ValueError):
        pathwise_gradient(spec, g, xi, eta, TestFunctional("indicator", v), mc)


def test_analytic_no_delay_and_zero():
    B0 = np.array([[0.1, 0.2], [0.0, -0.3]])
    spec = ModelSpec([-1.0, -2.0], 1.0, DriftSpec.linear_delay(2, B0=B0), DiffusionSpec.constant(2, 0.4))
    g = make_grid(1.0, 2.0, 100)
    eta = SegmentPath.constant(g, [1.0, 0.5])
    v = np.array([1.0, 2.0])
    exact = float(v @ expm((np.diag(spec.lam) + B0) * 2.0) @ [1.0, 0.5])
    assert analytic_linear_gradient(spec, eta, TestFunctional("linear_endpoint", v), g) == pytest.approx(exact, rel=1e-10)
    assert analytic_linear_gradient(spec, SegmentPath.zeros(g, 2), TestFunctional("linear_endpoint", v), g) == 0.0


def test_analytic_scalar_method_of_steps_closed_form():
    # v' = -v + v(t - 1)/2, v = 1 on [-1, 0]:
    #   [0, 1]: v = 1/2 + e^{-t}/2
    #   [1, 2]: v = 1/4 + (t - 1) e^{1 - t}/4 + (1/4 + e^{-1}/2) e^{1 - t}
    spec = scalar_linear(lam=-1.0, B1=0.5, s=0.3)
    g = make_grid(1.0, 2.0, 1000)
    val = analytic_linear_gradient(spec, SegmentPath.constant(g, [1.0]), TestFunctional("linear_endpoint", [1.0]), g)
    exact = 0.25 + 0.5 * math.exp(-1) + 0.5 * math.exp(-2)
    assert abs(val - exact) < 1e-9
    sol = delay_ode_solution(spec, SegmentPath.constant(g, [1.0]), 2.0, 1e-3)
    for t in (0.3, 0.9, 1.4):
        ref = 0.5 + 0.5 * math.exp(-t) if t <= 1 else 0.25 + 0.25 * (t - 1) * math.exp(1 - t) + (0.25 + 0.5 * math.exp(-1)) * math.exp(1 - t)
        assert sol(t)[0] == pytest.approx(ref, abs=1e-10)


def test_analytic_rejects_nonlinear():
    g = make_grid(1.0, 2.0, 10)
    with pytest.raises(ValueError):
        analytic_linear_gradient(nonlinear_d(1), SegmentPath.constant(g, [1.0]), TestFunctional("linear_endpoint", [1.0]), g)


def test_ibp_zero_h_exact():
    spec = nonlinear_d(2)
    g = make_grid(1.0, 2.0, 10)
    r = ibp_residual(spec, g, SegmentPath.constant(g, [0.1, 0.1]), zero_h(g, 2), smooth_f(2), MCConfig(100))
    assert r.value == 0.0 and r.std_error == 0.0


@pytest.mark.parametrize("noise", ["additive", "multiplicative"])
def test_ibp_residual_small(noise):
    spec = nonlinear_d(2, noise)
    g = make_grid(1.0, 2.0, 20)
    xi, eta = SegmentPath.constant(g, [0.1, 0.1]), SegmentPath.constant(g, [1.0, 0.5])
    if noise == "additive":
        h = additive_h(spec, g, eta, control_function("additive_normalized", g))
    else:
        h = multiplicative_h(spec, eta, control_function("multiplicative_linear", g, 2.0))
    r = ibp_residual(spec, g, xi, h, smooth_f(2), MCConfig(20_000, seed=5), eps=1e-3)
    assert abs(r.value) <= 3 * r.std_error + 1e-6
    assert r.diagnostics["d_h"] != 0.0
