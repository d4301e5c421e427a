import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import nonlinear_d, scalar_linear
from delaybismut.model import DiffusionSpec, DriftSpec, ModelSpec
from delaybismut.pathsim import (
    GridError,
    NoiseBundle,
    SegmentPath,
    coarsen_noise,
    integrate_mild,
    integrate_shifted,
    make_grid,
    picard_reference,
    sample_noise,
    segment_at,
)
from delaybismut.sensitivity import IntegrandPath


def test_make_grid_examples():
    g = make_grid(1.0, 2.0, 10)
    assert g.dt == pytest.approx(0.1) and g.K == 20
    g = make_grid(0.5, 2.0, 5)
    assert g.dt == pytest.approx(0.1) and g.K == 20
    with pytest.raises(GridError):
        make_grid(1.0, 1.05, 10)
    with pytest.raises(GridError):
        make_grid(1.0, 1.0, 10)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 50), st.integers(1, 200), st.sampled_from([0.25, 0.5, 1.0, 2.0]))
def test_make_grid_commensurate(m, extra, tau):
    T = tau + extra * tau / m
    g = make_grid(tau, T, m)
    assert g.K == m + extra
    assert g.K * g.dt == pytest.approx(T)


def test_noise_deterministic_and_batch_independent():
    g = make_grid(1.0, 2.0, 10)
    a = sample_noise(g, 3, 7, np.arange(10))
    b = sample_noise(g, 3, 7, np.arange(10))
    np.testing.assert_array_equal(a.dW, b.dW)
    # a path's stream does not depend on which batch it is drawn in
    c = sample_noise(g, 3, 7, [4, 9])
    np.testing.assert_array_equal(c.dW[:, 0], a.dW[:, 4])
    np.testing.assert_array_equal(c.dW[:, 1], a.dW[:, 9])
    d = sample_noise(g, 3, 8, np.arange(10))
    assert not np.array_equal(a.dW, d.dW)


def test_noise_moments():
    g = make_grid(1.0, 2.0, 10)
    n = 25_000  # 25k paths x 20 steps x 2 dims = 1e6 draws
    dW = sample_noise(g, 2, 11, np.arange(n)).dW.ravel()
    assert dW.size == 1_000_000
    assert abs(dW.mean()) <= 4 * math.sqrt(g.dt / dW.size)
    assert dW.var() == pytest.approx(g.dt, rel=0.01)


def test_noise_streams_uncorrelated():
    g = make_grid(1.0, 2.0, 100)
    dW = sample_noise(g, 1, 5, np.arange(400)).dW[:, :, 0]
    c = np.corrcoef(dW.T)
    off = c[~np.eye(400, dtype=bool)]
    # 200 draws per path: correlations are N(0, 1/200)
    assert np.max(np.abs(off)) < 6 / math.sqrt(200)


def test_deterministic_semigroup_exact():
    # zero increments stand in for sigma = 0
    spec = ModelSpec([-1.0, -3.0], 1.0, DriftSpec.linear_delay(2), DiffusionSpec.constant(2, 1.0))
    g = make_grid(1.0, 2.0, 10)
    xi = SegmentPath.constant(g, [1.0, 2.0])
    noise = NoiseBundle(np.zeros((g.K, 1, 2)), g.dt, 0, np.array([0]))
    tr = integrate_mild(spec, xi, noise, g)
    t = np.arange(g.K + 1) * g.dt
    np.testing.assert_allclose(tr.X[g.m :, 0], np.exp(np.outer(t, spec.lam)) * [1.0, 2.0], rtol=1e-13)
    norms = np.linalg.norm(tr.X[g.m :, 0], axis=-1)
    assert np.all(np.diff(norms) <= 0)


def test_one_step_by_hand():
    spec = scalar_linear(lam=-1.0, B1=0.5, s=0.2)
    g = make_grid(1.0, 2.0, 10)
    xi = SegmentPath.constant(g, [1.0])
    dW = np.zeros((g.K, 1, 1))
    dW[0] = 0.05
    tr = integrate_mild(spec, xi, NoiseBundle(dW, g.dt, 0, np.array([0])), g)
    assert tr.X[g.m + 1, 0, 0] == pytest.approx(math.exp(-0.1) * (1 + 0.05 + 0.01), rel=1e-14)


def test_initial_segment_preserved():
    spec = nonlinear_d(2)
    g = make_grid(1.0, 2.0, 10)
    xi = SegmentPath.from_function(g, lambda th: [np.cos(th), th])
    tr = integrate_mild(spec, xi, sample_noise(g, 2, 0, np.arange(3)), g)
    for p in range(3):
        np.testing.assert_array_equal(tr.X[: g.m + 1, p], xi.values)
    np.testing.assert_array_equal(segment_at(tr, 0.0).values[:, 0], xi.values)


def test_adaptedness():
    spec = nonlinear_d(2, "multiplicative")
    g = make_grid(1.0, 2.0, 10)
    xi = SegmentPath.constant(g, [0.3, -0.2])
    noise = sample_noise(g, 2, 1, np.arange(4))
    base = integrate_mild(spec, xi, noise, g).X
    for k in (0, 5, 13, g.K - 1):
        dW = noise.dW.copy()
        dW[k:] = np.random.default_rng(k).normal(size=dW[k:].shape)
        X = integrate_mild(spec, xi, NoiseBundle(dW, g.dt, 0, noise.path_index), g).X
        # X(t_i) for i <= k only uses increments before k
        np.testing.assert_array_equal(X[: g.m + k + 1], base[: g.m + k + 1])
        assert not np.array_equal(X[g.m + k + 1], base[g.m + k + 1])


def test_strong_self_convergence():
    spec = nonlinear_d(2, "multiplicative")
    errs = []
    for m in (20, 40, 80):
        fine = make_grid(1.0, 2.0, 2 * m)
        coarse = make_grid(1.0, 2.0, m)
        nf = sample_noise(fine, 2, 2, np.arange(10_000))
        xi_f, xi_c = SegmentPath.constant(fine, [0.5, 0.5]), SegmentPath.constant(coarse, [0.5, 0.5])
        a = integrate_mild(spec, xi_f, nf, fine).X[-1]
        b = integrate_mild(spec, xi_c, coarsen_noise(nf), coarse).X[-1]
        errs.append(math.sqrt(np.mean(np.sum((a - b) ** 2, axis=-1))))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    # order >= 1/2 means the L2 error at least shrinks by sqrt(2) per halving
    assert np.all(ratios > math.sqrt(2) * 0.9)


def test_shifted_zero_eps_bitwise():
    spec = nonlinear_d(2, "multiplicative")
    g = make_grid(1.0, 2.0, 10)
    xi = SegmentPath.constant(g, [0.1, 0.2])
    noise = sample_noise(g, 2, 3, np.arange(5))
    h = IntegrandPath(np.random.default_rng(0).normal(size=(g.K, 5, 2)))
    a = integrate_mild(spec, xi, noise, g)
    b = integrate_shifted(spec, xi, noise, h, 0.0, g)
    np.testing.assert_array_equal(a.X, b.X)


def test_shifted_symmetric_deviation():
    spec = nonlinear_d(2, "multiplicative")
    g = make_grid(1.0, 2.0, 10)
    xi = SegmentPath.constant(g, [0.1, 0.2])
    noise = sample_noise(g, 2, 3, np.arange(5))
    h = IntegrandPath(np.ones((g.K, 5, 2)))
    base = integrate_mild(spec, xi, noise, g).X
    dev = []
    for eps in (1e-2, 5e-3):
        p = integrate_shifted(spec, xi, noise, h, eps, g).X - base
        q = integrate_shifted(spec, xi, noise, h, -eps, g).X - base
        dev.append(np.max(np.abs(p + q)))
    # the symmetric part is second order in eps
    assert dev[0] / dev[1] == pytest.approx(4.0, rel=0.05)


def test_segment_windows():
    spec = scalar_linear()
    g = make_grid(1.0, 2.0, 10)
    tr = integrate_mild(spec, SegmentPath.constant(g, [1.0]), sample_noise(g, 1, 0, [0]), g)
    np.testing.assert_array_equal(segment_at(tr, 1.0).values, tr.X[g.m : 2 * g.m + 1])
    with pytest.raises(GridError):
        segment_at(tr, 0.55)
    const = integrate_mild(
        ModelSpec([0.0], 1.0, DriftSpec.linear_delay(1), DiffusionSpec.constant(1, 1.0)),
        SegmentPath.constant(g, [2.0]),
        NoiseBundle(np.zeros((g.K, 1, 1)), g.dt, 0, np.array([0])),
        g,
    )
    np.testing.assert_array_equal(segment_at(const, 1.5).values, 2.0)


def test_integration_failure_reported():
    spec = ModelSpec([-1.0], 1.0, DriftSpec.linear_delay(1, B0=0.0, B1=0.5), DiffusionSpec.constant(1, 1.0))
    g = make_grid(1.0, 2.0, 10)
    dW = np.zeros((g.K, 2, 1))
    dW[3, 1] = np.inf
    tr = integrate_mild(spec, SegmentPath.constant(g, [1.0]), NoiseBundle(dW, g.dt, 0, np.arange(2)), g, strict=False)
    assert tr.ok.tolist() == [True, False]
    assert tr.fail_step[1] == 3
    with pytest.raises(FloatingPointError):
        integrate_mild(spec, SegmentPath.constant(g, [1.0]), NoiseBundle(dW, g.dt, 0, np.arange(2)), g)


def test_picard_constant_sigma_no_drift_one_iterate():
    spec = ModelSpec([-1.0, -2.0], 1.0, DriftSpec.linear_delay(2), DiffusionSpec.constant(2, 0.3))
    g = make_grid(1.0, 2.0, 10)
    xi = SegmentPath.constant(g, [1.0, -1.0])
    noise = sample_noise(g, 2, 0, np.arange(3))
    res = picard_reference(spec, xi, noise, g, 3)
    assert res.distances[1] == 0.0
    np.testing.assert_allclose(res.trajectory.X, integrate_mild(spec, xi, noise, g).X, atol=1e-14)


def test_picard_contracts_and_matches_integrator():
    spec = nonlinear_d(2, "multiplicative")
    g = make_grid(1.0, 1.5, 10)
    xi = SegmentPath.constant(g, [0.4, 0.1])
    noise = sample_noise(g, 2, 4, np.arange(8))
    res = picard_reference(spec, xi, noise, g, 12)
    d = np.array(res.distances)
    assert not res.diverged
    assert d[-1] < 1e-6 * d[0]
    np.testing.assert_allclose(res.trajectory.X, integrate_mild(spec, xi, noise, g).X, atol=1e-8)


def test_picard_cross_solver_convergence():
    # iterate 10 on a coarse grid vs the integrator on a 4x finer grid, same Brownian path
    spec = nonlinear_d(2)
    errs = []
    for m in (10, 20, 40):
        coarse, fine = make_grid(1.0, 1.5, m), make_grid(1.0, 1.5, 4 * m)
        nf = sample_noise(fine, 2, 9, np.arange(200))
        nc = coarsen_noise(nf, 4)
        a = picard_reference(spec, SegmentPath.constant(coarse, [0.5, 0.5]), nc, coarse, 10).trajectory.X[-1]
        b = integrate_mild(spec, SegmentPath.constant(fine, [0.5, 0.5]), nf, fine).X[-1]
        errs.append(math.sqrt(np.mean(np.sum((a - b) ** 2, axis=-1))))
    assert errs[0] > errs[1] > errs[2]
