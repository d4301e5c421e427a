"""Bismut-type Monte Carlo estimators of grad_eta P_T f.

The weight is the left-point Ito sum  sum_k <hdot(t_k), dW_k>.  For a
Gaussian increment scheme and an adapted integrand this sum is exactly the
derivative of the discrete Girsanov density, so the estimators target the
derivative of the *discrete* semigroup; the remaining bias is the mismatch
between tangent and Malliavin derivatives at T (zero for the additive
construction with the linear control, O(dt) otherwise).
"""

from __future__ import annotations

import numpy as np

from .mc import GradientEstimate, MCConfig, run_paths, summarize, mean_and_se, usable
from .model import ModelSpec, TestFunctional
from .pathsim import GridSpec, NoiseBundle, SegmentPath, integrate_mild
from .sensitivity import (
    ControlFunction,
    IntegrandPath,
    additive_hdot,
    multiplicative_hdot,
    upsilon_path,
    z_path,
)


def ito_weight(g, noise: NoiseBundle) -> np.ndarray:
    """Left-point Ito sum sum_k <g(t_k), dW_k>, one value per path."""
    vals = getattr(g, "values", g)
    vals = np.asarray(vals, dtype=float)
    if vals.ndim == 2:
        vals = vals[:, None, :]
    K = vals.shape[0]
    if K != noise.K or vals.shape[-1] != noise.dW.shape[-1]:
        raise ValueError(f"integrand has {K} steps, noise has {noise.K}")
    return np.einsum("knd,knd->n", np.broadcast_to(vals, noise.dW.shape), noise.dW)


def terminal_values(traj, f: TestFunctional) -> np.ndarray:
    m = traj.grid.m
    return f.evaluate_values(traj.X[-(m + 1) :])


def additive_integrand(spec, traj, eta, u, upsilon=None) -> IntegrandPath:
    if upsilon is None:
        upsilon = upsilon_path(spec, eta, u, traj.grid)
    return additive_hdot(spec, traj, upsilon, u, eta)


def multiplicative_integrand(spec, traj, eta, u) -> IntegrandPath:
    z = z_path(spec, traj, eta, u)
    return multiplicative_hdot(spec, traj, z, u)


def _check_additive(spec: ModelSpec, u: ControlFunction):
    if spec.noise_kind != "additive":
        raise ValueError("additive estimator needs an additive-noise model")
    if not u.is_additive:
        raise ValueError("additive estimator needs u(0) = 1 and u = 0 on [T - tau, T]")


def _check_multiplicative(spec: ModelSpec, u: ControlFunction):
    if spec.noise_kind != "multiplicative":
        raise ValueError("multiplicative estimator needs a multiplicative-noise model")
    if u.theta_p is None or not u.theta_p > 0:
        raise ValueError("multiplicative estimator needs a control with theta_p > 0")


def bismut_samples(spec: ModelSpec, grid: GridSpec, xi: SegmentPath, eta: SegmentPath, f: TestFunctional | None, u: ControlFunction, mc: MCConfig, seed_offset: int = 0) -> dict[str, np.ndarray]:
    """Per-path f(X_T), weight and diagnostics for either noise regime."""
    additive = spec.noise_kind == "additive"
    if additive:
        _check_additive(spec, u)
        ups = upsilon_path(spec, eta, u, grid)
    else:
        _check_multiplicative(spec, u)

    def kernel(noise):
        traj = integrate_mild(spec, xi, noise, grid, strict=False)
        if additive:
            h = additive_integrand(spec, traj, eta, u, ups)
        else:
            z = z_path(spec, traj, eta, u)
            h = multiplicative_hdot(spec, traj, z, u)
        w = ito_weight(h, noise)
        norms = np.linalg.norm(h.values, axis=-1)
        out = {
            "weight": w,
            "ok": traj.ok & np.isfinite(w),
            "max_integrand": np.max(norms, axis=0),
            "quad_var": np.sum(norms**2, axis=0) * grid.dt,
        }
        if not additive:
            kc = grid.k_cut
            r = np.linalg.norm(z.values[grid.m : grid.m + kc], axis=-1) / u.u[:kc, None]
            out["max_z_over_u"] = np.max(r, axis=0)
        out["f"] = terminal_values(traj, f) if f is not None else np.zeros(noise.n_paths)
        return out

    return run_paths(mc, grid, spec.dim, kernel, seed_offset)


def _weight_diagnostics(s: dict, mc: MCConfig) -> dict:
    mask = usable(mc, s["ok"])
    wmean, wse, _ = mean_and_se(s["weight"], mc, mask)
    w = s["weight"][mask]
    diag = {
        "weight_mean": wmean,
        "weight_std_error": wse,
        "weight_second_moment": float(np.mean(w**2)),
        "max_integrand_norm": float(np.max(s["max_integrand"][mask])),
        "mean_quadratic_variation": float(np.mean(s["quad_var"][mask])),
    }
    if "max_z_over_u" in s:
        diag["max_z_over_u"] = float(np.max(s["max_z_over_u"][mask]))
    # optional control variate on the mean-zero weight
    fw = (s["f"] * s["weight"])[mask]
    var_w = float(np.var(w, ddof=1))
    if var_w > 0:
        beta = float(np.cov(fw, w)[0, 1] / var_w)
        cv_mean, cv_se, _ = mean_and_se(fw - beta * w, mc.with_(antithetic=False))
        diag.update(cv_value=cv_mean, cv_std_error=cv_se, cv_beta=beta)
    return diag


def additive_weight_bound(spec: ModelSpec, grid: GridSpec, eta: SegmentPath) -> float:
    """||sigma^-1||^2 (L_F ||eta||_inf + ||eta(0)|| / (T - tau))^2 T."""
    inv = spec.diffusion.inverse_bound
    lf = spec.drift.lipschitz
    eta_sup = float(np.max(np.linalg.norm(eta.values, axis=-1)))
    eta0 = float(np.linalg.norm(eta.values[-1]))
    return inv**2 * (lf * eta_sup + eta0 / (grid.T - grid.tau)) ** 2 * grid.T


def estimate_semigroup(spec: ModelSpec, grid: GridSpec, xi: SegmentPath, f: TestFunctional, mc: MCConfig) -> GradientEstimate:
    """P_T f(xi) = E f(X_T^xi)."""

    def kernel(noise):
        traj = integrate_mild(spec, xi, noise, grid, strict=False)
        fv = terminal_values(traj, f)
        return {"f": fv, "ok": traj.ok & np.isfinite(fv)}

    s = run_paths(mc, grid, spec.dim, kernel)
    return summarize(s["f"], s["ok"], mc, "semigroup")


def estimate_gradient_additive(spec: ModelSpec, grid: GridSpec, xi: SegmentPath, eta: SegmentPath, f: TestFunctional, u: ControlFunction, mc: MCConfig) -> GradientEstimate:
    """E[f(X_T) int <sigma^-1(grad_{Upsilon_t} F(X_t) - u'(t) e^{tA} eta(0)), dW>]."""
    _check_additive(spec, u)
    s = bismut_samples(spec, grid, xi, eta, f, u, mc)
    diag = _weight_diagnostics(s, mc)
    diag["weight_second_moment_bound"] = additive_weight_bound(spec, grid, eta)
    return summarize(s["f"] * s["weight"], s["ok"], mc, "bismut-additive", diag)


def estimate_gradient_multiplicative(spec: ModelSpec, grid: GridSpec, xi: SegmentPath, eta: SegmentPath, f: TestFunctional, u: ControlFunction, mc: MCConfig) -> GradientEstimate:
    """E[f(X_T) int <sigma^-1(X){Z/u before T - tau, grad_{Z_t} F(X_t) after}, dW>]."""
    _check_multiplicative(spec, u)
    if not np.isfinite(spec.diffusion.inverse_bound):
        raise ValueError("sigma^-1 must be bounded")
    s = bismut_samples(spec, grid, xi, eta, f, u, mc)
    diag = _weight_diagnostics(s, mc)
    return summarize(s["f"] * s["weight"], s["ok"], mc, "bismut-multiplicative", diag)


def estimate_gradient(spec, grid, xi, eta, f, u, mc) -> GradientEstimate:
    """Dispatch on the model's noise kind."""
    if spec.noise_kind == "additive":
        return estimate_gradient_additive(spec, grid, xi, eta, f, u, mc)
    return estimate_gradient_multiplicative(spec, grid, xi, eta, f, u, mc)


def weight_mean(spec, grid, xi, eta, u, mc) -> GradientEstimate:
    """Plain MC mean of the weight (a mean-zero martingale at T)."""
    s = bismut_samples(spec, grid, xi, eta, None, u, mc)
    return summarize(s["weight"], s["ok"], mc, "weight-mean")
