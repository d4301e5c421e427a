"""Independent estimates of grad_eta P_T f used to validate the Bismut weights.

Each Monte Carlo oracle draws from its own noise stream (a fixed offset on
the seed) so that its standard error combines with a Bismut estimate as
for independent samples.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp

from .bismut import additive_integrand, ito_weight, multiplicative_integrand, terminal_values
from .mc import GradientEstimate, MCConfig, run_paths, summarize
from .model import ModelSpec, TestFunctional
from .pathsim import GridSpec, SegmentPath, integrate_mild, integrate_shifted
from .sensitivity import IntegrandPath, malliavin_path, tangent_path, upsilon_path

FD_STREAM = 1_000_003
PATHWISE_STREAM = 2_000_003
IBP_STREAM = 3_000_017


def default_epsilon(xi: SegmentPath, eta: SegmentPath) -> float:
    """1e-3 max(1, ||xi||_inf) / ||eta||_inf."""
    xs = float(np.max(xi.sup_norm))
    es = float(np.max(eta.sup_norm))
    if es == 0.0:
        return 1e-3
    return 1e-3 * max(1.0, xs) / es


def fd_gradient(spec: ModelSpec, grid: GridSpec, xi: SegmentPath, eta: SegmentPath, f: TestFunctional, mc: MCConfig, eps: float | None = None, crn: bool = True, seed_offset: int = FD_STREAM) -> GradientEstimate:
    """Central difference [P_T f(xi + eps eta) - P_T f(xi - eps eta)] / (2 eps).

    With ``crn`` both sides use the same increments per path and the error
    bar comes from the per-path differenced statistic.  Without it the minus
    side uses an independent stream.
    """
    if eps is None:
        eps = default_epsilon(xi, eta)
    if not eps > 0:
        raise ValueError("eps must be positive")
    plus, minus = xi + eta * eps, xi - eta * eps

    def kernel(noise):
        a = integrate_mild(spec, plus, noise, grid, strict=False)
        fa = terminal_values(a, f)
        return {"f": fa, "ok": a.ok & np.isfinite(fa)}

    def kernel_pair(noise):
        a = integrate_mild(spec, plus, noise, grid, strict=False)
        b = integrate_mild(spec, minus, noise, grid, strict=False)
        fa, fb = terminal_values(a, f), terminal_values(b, f)
        d = (fa - fb) / (2 * eps)
        return {"d": d, "ok": a.ok & b.ok & np.isfinite(d)}

    diag = {"epsilon": eps, "crn": crn}
    if crn:
        s = run_paths(mc, grid, spec.dim, kernel_pair, seed_offset)
        return summarize(s["d"], s["ok"], mc, "fd", diag)
    sa = run_paths(mc, grid, spec.dim, kernel, seed_offset)

    def kernel_minus(noise):
        b = integrate_mild(spec, minus, noise, grid, strict=False)
        fb = terminal_values(b, f)
        return {"f": fb, "ok": b.ok & np.isfinite(fb)}

    sb = run_paths(mc, grid, spec.dim, kernel_minus, seed_offset + 7919)
    d = (sa["f"] - sb["f"]) / (2 * eps)
    return summarize(d, sa["ok"] & sb["ok"], mc, "fd", diag)


def pathwise_gradient(spec: ModelSpec, grid: GridSpec, xi: SegmentPath, eta: SegmentPath, f: TestFunctional, mc: MCConfig, seed_offset: int = PATHWISE_STREAM) -> GradientEstimate:
    """E <grad f(X_T), (grad_eta X)_T> along the discrete tangent process."""
    if not f.has_gradient:
        raise ValueError(f"functional {f.kind!r} has no gradient rule")
    m = grid.m

    def kernel(noise):
        traj = integrate_mild(spec, xi, noise, grid, strict=False)
        beta = tangent_path(spec, traj, eta)
        g = f.gradient_values(traj.X[-(m + 1) :], beta.values[-(m + 1) :])
        return {"g": g, "ok": traj.ok & np.isfinite(g)}

    s = run_paths(mc, grid, spec.dim, kernel, seed_offset)
    return summarize(s["g"], s["ok"], mc, "pathwise")


def delay_ode_solution(spec: ModelSpec, eta: SegmentPath, T: float, max_step: float):
    """Solve v' = (A + B0) v + B1 v(t - tau) with v = eta on [-tau, 0] by the method of steps.

    Returns a callable t -> v(t) on [-tau, T].  Each interval of length tau
    is an ODE whose delayed term reads the dense output of the previous one.
    """
    if spec.drift.kind != "linear_delay":
        raise ValueError("analytic oracle needs a linear_delay drift")
    tau = spec.tau
    M = np.diag(spec.lam) + spec.drift.B0
    B1 = spec.drift.B1
    nodes = np.linspace(-tau, 0.0, eta.values.shape[0])
    ev = eta.values

    def initial(t):
        return np.array([np.interp(t, nodes, ev[:, j]) for j in range(ev.shape[1])])

    pieces = []  # (start, stop, dense)

    def history(t):
        if t <= 0.0:
            return initial(t)
        for a, b, sol in pieces:
            if t <= b + 1e-15:
                return sol(min(max(t, a), b))
        raise ValueError("history requested beyond solved range")

    start, v0 = 0.0, ev[-1].copy()
    while start < T - 1e-14:
        stop = min(start + tau, T)

        def rhs(t, v):
            return M @ v + B1 @ history(t - tau)

        res = solve_ivp(rhs, (start, stop), v0, method="DOP853", rtol=1e-12, atol=1e-14, dense_output=True, max_step=max_step)
        if not res.success:
            raise RuntimeError(res.message)
        pieces.append((start, stop, res.sol))
        start, v0 = stop, res.y[:, -1]
    return history


def analytic_linear_gradient(spec: ModelSpec, eta: SegmentPath, f: TestFunctional, grid: GridSpec) -> float:
    """grad_eta P_T f for a linear delay model and a linear f (no MC error).

    For linear drift and constant sigma the tangent process is the
    deterministic delay ODE started from eta; the reference is solved with a
    step ten times finer than the Monte Carlo grid.
    """
    if spec.drift.kind != "linear_delay" or spec.diffusion.state_dependent:
        raise ValueError("analytic oracle needs linear drift and constant sigma")
    if f.kind != "linear_endpoint":
        raise ValueError("analytic oracle needs a linear_endpoint functional")
    if not np.any(eta.values):
        return 0.0
    sol = delay_ode_solution(spec, eta, grid.T, grid.dt / 10)
    thetas = grid.T + np.arange(-grid.m, 1) * grid.dt
    seg = np.array([sol(t) for t in thetas])
    return float(f.gradient_values(seg, seg))


def additive_h(spec: ModelSpec, grid: GridSpec, eta: SegmentPath, u):
    """Builder traj -> hdot for the additive construction."""
    ups = upsilon_path(spec, eta, u, grid)
    return lambda traj: additive_integrand(spec, traj, eta, u, ups)


def multiplicative_h(spec: ModelSpec, eta: SegmentPath, u):
    """Builder traj -> hdot for the multiplicative construction."""
    return lambda traj: multiplicative_integrand(spec, traj, eta, u)


def zero_h(grid: GridSpec, d: int):
    return lambda traj: IntegrandPath(np.zeros((grid.K, traj.n_paths, d)))


def ibp_residual(spec: ModelSpec, grid: GridSpec, xi: SegmentPath, h_builder, f: TestFunctional, mc: MCConfig, eps: float = 1e-3, seed_offset: int = IBP_STREAM) -> GradientEstimate:
    """E[D_h f(X_T)] - E[f(X_T) sum <hdot, dW>] on common paths.

    D_h f is a central difference of f along the noise shift W -> W +/- eps h
    with h built once from the unshifted path.  The value is the signed
    residual; its error bar comes from the per-path difference.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")

    def kernel(noise):
        traj = integrate_mild(spec, xi, noise, grid, strict=False)
        h = h_builder(traj)
        a = integrate_shifted(spec, xi, noise, h, eps, grid, strict=False)
        b = integrate_shifted(spec, xi, noise, h, -eps, grid, strict=False)
        dh = (terminal_values(a, f) - terminal_values(b, f)) / (2 * eps)
        fw = terminal_values(traj, f) * ito_weight(h, noise)
        r = dh - fw
        return {"r": r, "dh": dh, "fw": fw, "ok": traj.ok & a.ok & b.ok & np.isfinite(r)}

    s = run_paths(mc, grid, spec.dim, kernel, seed_offset)
    ok = s["ok"]
    dh = summarize(s["dh"], ok, mc, "D_h f")
    fw = summarize(s["fw"], ok, mc, "f weight")
    diag = {"epsilon": eps, "d_h": dh.value, "d_h_se": dh.std_error, "f_weight": fw.value, "f_weight_se": fw.std_error}
    return summarize(s["r"], ok, mc, "ibp-residual", diag)


def malliavin_fd_error(spec: ModelSpec, grid: GridSpec, traj, h: IntegrandPath, eps: float = 1e-4) -> float:
    """sup_t ||(X^{eps h} - X^{-eps h})/(2 eps) - D_h X|| over nodes and paths.

    The central difference of the shifted solution should match the
    Malliavin path up to O(eps^2); this measures the error process directly.
    """
    xi, noise = traj.xi, traj.noise
    a = integrate_shifted(spec, xi, noise, h, eps, grid)
    b = integrate_shifted(spec, xi, noise, h, -eps, grid)
    alpha = malliavin_path(spec, traj, h)
    diff = (a.X - b.X) / (2 * eps) - alpha.values
    return float(np.max(np.linalg.norm(diff, axis=-1)))
