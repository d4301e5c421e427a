import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from conftest import nonlinear_d, scalar_linear
from delaybismut.model import (
    DiffusionSpec,
    DriftSpec,
    ModelSpec,
    ModelValidationError,
    TestFunctional,
    a4_integral,
    eval_drift,
    eval_drift_derivative,
    eval_sigma,
    eval_sigma_derivative,
    eval_sigma_inverse,
    normalize_pseudocontractive,
    semigroup_apply,
    validate_assumptions,
)
from delaybismut.pathsim import SegmentPath, integrate_mild, make_grid, sample_noise

finite = st.floats(-3, 3, allow_nan=False)


def test_assumptions_pass_and_a4_matches_closed_form():
    spec = ModelSpec([-1.0], 1.0, DriftSpec.linear_delay(1), DiffusionSpec.constant(1, 0.5), a4_alpha=0.25)
    rep = validate_assumptions(spec)
    assert rep.passed
    # s = x^2: int_0^1 s^{-1/2} e^{-2s} 0.25 ds = 0.5 int_0^1 e^{-2x^2} dx
    exact = 0.5 * math.sqrt(math.pi / 8) * math.erf(math.sqrt(2))
    assert abs(rep.a4_integral - exact) <= 1e-10


def test_a4_integral_general_alpha_vs_quadrature():
    spec = nonlinear_d(3).with_(a4_alpha=0.4)
    S = spec.diffusion.S
    ref, _ = integrate.quad(lambda s: s ** (-0.8) * np.sum((np.exp(spec.lam * s)[:, None] * S) ** 2), 0, 1, limit=200)
    assert a4_integral(spec) == pytest.approx(ref, rel=1e-7)


def test_positive_eigenvalue_flagged():
    spec = ModelSpec([0.3, -1.0], 1.0, DriftSpec.linear_delay(2), DiffusionSpec.constant(2, 1.0))
    rep = validate_assumptions(spec)
    assert not rep.passed and rep.failures == ["A1"]


def test_near_degenerate_saturating_inverse_bound():
    spec = ModelSpec([-1.0], 1.0, DriftSpec.linear_delay(1), DiffusionSpec.diagonal_saturating(1, 1.0, 0.999), noise_kind="multiplicative")
    rep = validate_assumptions(spec)
    assert rep.passed
    assert rep.sigma_inverse_bound == pytest.approx(1000.0, rel=1e-9)


def test_invalid_specs_rejected():
    with pytest.raises(ModelValidationError):
        ModelSpec([-1.0], 0.0, DriftSpec.linear_delay(1), DiffusionSpec.constant(1, 1.0))
    with pytest.raises(ModelValidationError):
        ModelSpec([-1.0], 1.0, DriftSpec.linear_delay(1), DiffusionSpec.constant(1, 1.0), a4_alpha=0.5)
    with pytest.raises(ModelValidationError):
        ModelSpec([-1.0], 1.0, DriftSpec.linear_delay(1), DiffusionSpec.diagonal_saturating(1, 1.0, 0.5))
    with pytest.raises(ModelValidationError):
        DiffusionSpec.diagonal_saturating(1, 1.0, 1.0)
    with pytest.raises(ModelValidationError):
        DiffusionSpec.constant(2, np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_normalize_shifts_eigenvalues_and_B0():
    spec = ModelSpec([0.5, -1.0], 1.0, DriftSpec.linear_delay(2, B1=0.2), DiffusionSpec.constant(2, 1.0))
    out = normalize_pseudocontractive(spec)
    np.testing.assert_allclose(out.lam, [0.0, -1.5])
    np.testing.assert_allclose(out.drift.B0, 0.5 * np.eye(2))
    assert validate_assumptions(out).checks["A1"]
    assert normalize_pseudocontractive(out) is out


def test_normalize_identity_when_contractive(linear_model):
    assert normalize_pseudocontractive(linear_model) is linear_model


def test_normalized_system_converges_to_original():
    # both are exponential-Euler schemes of the same equation, so they agree to first order in dt
    spec = ModelSpec([0.5], 1.0, DriftSpec.linear_delay(1, B1=0.3), DiffusionSpec.constant(1, 0.3))
    errs = []
    for m in (100, 200, 400, 800):
        grid = make_grid(1.0, 2.0, m)
        xi = SegmentPath.constant(grid, [1.0])
        noise = sample_noise(grid, 1, 3, np.arange(20))
        a = integrate_mild(spec, xi, noise, grid).X
        b = integrate_mild(normalize_pseudocontractive(spec), xi, noise, grid).X
        errs.append(np.max(np.abs(a - b)))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(ratios > 1.8) and np.all(ratios < 2.2)
    assert errs[-1] <= 5 * (1.0 / 800)


def test_linear_delay_drift_trivial(small_grid):
    drift = DriftSpec.linear_delay(1, B1=0.5)
    seg = SegmentPath.constant(small_grid, [2.0])
    assert eval_drift(drift, seg) == pytest.approx([1.0])
    direction = SegmentPath.from_function(small_grid, lambda th: [np.sin(th)])
    np.testing.assert_allclose(eval_drift_derivative(drift, seg, direction), eval_drift(drift, direction))


def test_nonlinear_drift_derivative_matches_central_difference(small_grid):
    spec = nonlinear_d(3)
    rng = np.random.default_rng(0)
    seg = SegmentPath(rng.normal(size=(small_grid.m + 1, 3)), small_grid.dt)
    direction = SegmentPath(rng.normal(size=(small_grid.m + 1, 3)), small_grid.dt)
    eps = 1e-6
    fd = (eval_drift(spec.drift, seg + direction * eps) - eval_drift(spec.drift, seg - direction * eps)) / (2 * eps)
    exact = eval_drift_derivative(spec.drift, seg, direction)
    np.testing.assert_allclose(fd, exact, rtol=1e-8, atol=1e-9)


def test_drift_derivative_grid_mismatch(small_grid):
    drift = DriftSpec.linear_delay(1, B1=0.5)
    seg = SegmentPath.constant(small_grid, [1.0])
    other = SegmentPath.constant(make_grid(1.0, 2.0, 10), [1.0])
    with pytest.raises(ValueError):
        eval_drift_derivative(drift, seg, other)


@settings(max_examples=30, deadline=None)
@given(st.lists(finite, min_size=2 * 21 * 2, max_size=2 * 21 * 2), finite)
def test_drift_derivative_linear_in_direction(vals, a):
    grid = make_grid(1.0, 2.0, 20)
    spec = nonlinear_d(2)
    v = np.array(vals).reshape(2, 21, 2)
    seg = SegmentPath(np.tanh(v[0]), grid.dt)
    d1, d2 = SegmentPath(v[0], grid.dt), SegmentPath(v[1], grid.dt)
    lhs = eval_drift_derivative(spec.drift, seg, d1 * a + d2)
    rhs = a * eval_drift_derivative(spec.drift, seg, d1) + eval_drift_derivative(spec.drift, seg, d2)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)
    bound = spec.drift.lipschitz * np.max(np.linalg.norm(d1.values, axis=-1))
    assert np.linalg.norm(eval_drift_derivative(spec.drift, seg, d1)) <= bound * (1 + 1e-12)


def test_sigma_trivial_cases():
    const = DiffusionSpec.constant(2, [[1.0, 0.2], [0.0, 0.5]])
    np.testing.assert_array_equal(eval_sigma_derivative(const, np.ones(2), np.ones(2)), np.zeros((2, 2)))
    sat = DiffusionSpec.diagonal_saturating(2, [1.0, 2.0], [0.5, 0.1])
    np.testing.assert_array_equal(eval_sigma(sat, np.zeros(2)), np.diag([1.0, 2.0]))


def test_sigma_derivative_matches_central_difference():
    diff = DiffusionSpec.diagonal_saturating(3, [1.0, 2.0, 1.5], [0.5, -0.3, 0.9])
    rng = np.random.default_rng(1)
    x, v = rng.normal(size=3), rng.normal(size=3)
    eps = 1e-6
    fd = (eval_sigma(diff, x + eps * v) - eval_sigma(diff, x - eps * v)) / (2 * eps)
    np.testing.assert_allclose(fd, eval_sigma_derivative(diff, x, v), atol=1e-8)
    assert np.linalg.norm(eval_sigma_derivative(diff, x, v)) <= diff.lipschitz * np.linalg.norm(v) * (1 + 1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=3, max_size=3))
def test_sigma_inverse_is_inverse(x):
    x = np.array(x)
    for diff in (DiffusionSpec.diagonal_saturating(3, [1.0, 2.0, 1.5], [0.5, -0.3, 0.9]), DiffusionSpec.constant(3, [[1.0, 0.3, 0.0], [0.0, 2.0, 0.1], [0.2, 0.0, 0.7]])):
        np.testing.assert_allclose(eval_sigma_inverse(diff, x) @ eval_sigma(diff, x), np.eye(3), atol=1e-12)
        assert np.linalg.norm(eval_sigma_inverse(diff, x), 2) <= diff.inverse_bound * (1 + 1e-12)


def test_semigroup_examples(linear_model):
    assert semigroup_apply(linear_model, 0.0, [1.5]) == pytest.approx([1.5])
    assert semigroup_apply(linear_model, math.log(2), [1.0]) == pytest.approx([0.5])
    with pytest.raises(ValueError):
        semigroup_apply(linear_model, -0.1, [1.0])


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10), st.lists(finite, min_size=4, max_size=4))
def test_semigroup_contractive(t1, t2, v):
    spec = nonlinear_d(4)
    a, b = sorted((t1, t2))
    va, vb = semigroup_apply(spec, a, v), semigroup_apply(spec, b, v)
    assert np.linalg.norm(vb) <= np.linalg.norm(va) + 1e-12 <= np.linalg.norm(v) + 2e-12


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_normalize_idempotent(lam):
    spec = ModelSpec(lam, 1.0, DriftSpec.linear_delay(3, B1=0.1), DiffusionSpec.constant(3, 1.0))
    once = normalize_pseudocontractive(spec)
    twice = normalize_pseudocontractive(once)
    np.testing.assert_array_equal(once.lam, twice.lam)
    np.testing.assert_array_equal(once.drift.B0, twice.drift.B0)


def test_lipschitz_constants():
    d = DriftSpec.linear_delay(1, B0=0.2, B1=-0.5)
    assert d.lipschitz == pytest.approx(0.7)
    nl = DriftSpec.bounded_nonlinear(1, G0=0.5, G1=0.3, delay_weights=[(-0.5, 0.2), (-0.25, -0.1)])
    assert nl.lipschitz == pytest.approx(1.1)


def test_functionals(small_grid):
    seg = SegmentPath.constant(small_grid, [0.5, -1.0])
    lin = TestFunctional("linear_endpoint", [2.0, 1.0])
    assert lin(seg) == pytest.approx(0.0)
    pos = TestFunctional("positive_bounded", [1.0, 0.0], lo=0.2, hi=0.8)
    assert 0.2 < pos(seg) < 0.8
    ind = TestFunctional("indicator", [1.0, 0.0])
    assert ind(seg) == 1.0 and not ind.has_gradient
    with pytest.raises(ModelValidationError):
        TestFunctional("positive_bounded", [1.0], lo=0.0)
    f = TestFunctional("bounded_smooth", [1.0, 0.3], v_mid=[0.2, 0.1])
    direction = SegmentPath.from_function(small_grid, lambda th: [np.cos(th), th])
    eps = 1e-6
    fd = (f(seg + direction * eps) - f(seg - direction * eps)) / (2 * eps)
    assert f.gradient(seg, direction) == pytest.approx(fd, abs=1e-9)


def test_scalar_linear_helper_passes():
    assert validate_assumptions(scalar_linear()).passed
    assert validate_assumptions(nonlinear_d(4, "multiplicative")).passed
