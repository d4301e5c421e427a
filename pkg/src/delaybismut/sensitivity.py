"""Control functions, auxiliary processes and the h-dot integrands.

All auxiliary paths share the history layout of
:class:`~delaybismut.pathsim.Trajectory` (time-major, ``(K+m+1, n, d)``);
deterministic ones carry a singleton path axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from ._kernels import _EMPTY1, _EMPTY3, linear_steps, pack_taps
from .model import ModelSpec, apply_coef, sat
from .pathsim import GridSpec, SegmentPath, Trajectory

CONTROL_KINDS = ("additive_normalized", "multiplicative_linear", "table")


class ControlError(ValueError):
    pass


@dataclass
class ControlFunction:
    """Schedule u on the grid nodes t_0..t_K.

    ``u[k]`` is u(t_k); ``udot[k]`` is the derivative used on [t_k, t_{k+1})
    (left value), zero from T - tau on.  ``theta_p`` is
    min_k {p + (p-1) u'(t_k)} over nodes of [0, T - tau].
    """

    kind: str
    grid: GridSpec
    u: np.ndarray
    udot: np.ndarray
    p: float | None = None
    theta_p: float | None = None
    damping: np.ndarray = field(default=None, repr=False)

    @property
    def is_additive(self) -> bool:
        return abs(self.u[0] - 1.0) < 1e-12 and np.all(self.u[self.grid.k_cut :] == 0.0)


def _linear_damping(u, k_cut):
    rho = np.zeros(len(u) - 1)
    rho[:k_cut] = u[1 : k_cut + 1] / u[:k_cut]
    return rho


def _integrated_damping(u, k_cut, dt):
    """exp(-int_{t_k}^{t_{k+1}} ds/u(s)) with u linear between nodes; 0 once u hits 0."""
    rho = np.zeros(len(u) - 1)
    a, b = u[:k_cut], u[1 : k_cut + 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        integral = np.where(np.abs(a - b) > 1e-14 * a, dt * np.log(a / b) / (a - b), dt / a)
    rho[:k_cut] = np.where(b > 0, np.exp(-integral), 0.0)
    return rho


def control_function(kind: str, grid: GridSpec, p: float | None = None, u_fn=None, udot_fn=None) -> ControlFunction:
    """Build u.

    ``additive_normalized``: u(t) = (T - tau - t)^+ / (T - tau).
    ``multiplicative_linear``: u(t) = (T - tau - t)^+, theta_p = 1.
    ``table``: user callables ``u_fn`` and ``udot_fn`` (or node arrays).  With
    ``p`` given the multiplicative hypotheses are enforced (u > 0 before
    T - tau, theta_p > 0), otherwise the additive ones (u(0) = 1).
    """
    if kind not in CONTROL_KINDS:
        raise ControlError(f"control kind must be one of {CONTROL_KINDS}")
    t = np.arange(grid.K + 1) * grid.dt
    kc = grid.k_cut
    span = grid.T - grid.tau
    if kind == "additive_normalized":
        u = np.maximum(span - t, 0.0) / span
        u[kc:] = 0.0
        udot = np.where(np.arange(grid.K) < kc, -1.0 / span, 0.0)
        slope_closed = np.full(kc + 1, -1.0 / span)
        damping = _integrated_damping(u, kc, grid.dt)
    elif kind == "multiplicative_linear":
        if p is None or not p > 1:
            raise ControlError("multiplicative controls need p > 1")
        u = np.maximum(span - t, 0.0)
        u[kc:] = 0.0
        udot = np.where(np.arange(grid.K) < kc, -1.0, 0.0)
        slope_closed = np.full(kc + 1, -1.0)
        damping = _linear_damping(u, kc)
    else:
        if u_fn is None or udot_fn is None:
            raise ControlError("table controls need u and its derivative")
        u = _nodes(u_fn, t)
        slope_all = _nodes(udot_fn, t)
        if np.any(np.abs(u[kc:]) > 1e-12):
            raise ControlError("table control must vanish on [T - tau, T]")
        u[kc:] = 0.0
        udot = np.where(np.arange(grid.K) < kc, slope_all[:-1], 0.0)
        slope_closed = slope_all[: kc + 1]
        if p is None:
            if abs(u[0] - 1.0) > 1e-12:
                raise ControlError("additive table control needs u(0) = 1")
        else:
            if not p > 1:
                raise ControlError("multiplicative controls need p > 1")
            if np.any(u[:kc] <= 0):
                raise ControlError("multiplicative table control must be positive on [0, T - tau)")
        damping = _integrated_damping(u, kc, grid.dt) if np.all(u[:kc] > 0) else None
    theta = None
    if p is not None:
        theta = float(np.min(p + (p - 1.0) * slope_closed))
        if not theta > 0:
            raise ControlError(f"theta_p = {theta:g} <= 0: control rejected")
    return ControlFunction(kind, grid, u, udot, p, theta, damping)


def _nodes(fn, t):
    if callable(fn):
        return np.array([float(fn(s)) for s in t])
    arr = np.asarray(fn, dtype=float)
    if arr.shape != t.shape:
        raise ControlError("table node values do not match the grid")
    return arr.copy()


def table_from_knots(knots_t, knots_u):
    """Monotone cubic interpolation of (t, u) knots; returns ``(u_fn, udot_fn)``."""
    knots_t = np.asarray(knots_t, dtype=float)
    interp = PchipInterpolator(knots_t, np.asarray(knots_u, dtype=float), extrapolate=False)
    deriv = interp.derivative()
    t_end = knots_t[-1]

    def u_fn(s):
        return 0.0 if s >= t_end else float(interp(s))

    def udot_fn(s):
        return 0.0 if s > t_end else float(deriv(min(s, t_end)))

    return u_fn, udot_fn


@dataclass
class IntegrandPath:
    """Adapted integrand g(t_k), k = 0..K-1, shape ``(K, n, d)``."""

    values: np.ndarray
    diagnostics: dict = field(default_factory=dict)


@dataclass
class AuxPath:
    """Auxiliary history (upsilon, z, tangent, malliavin); layout as the trajectory."""

    values: np.ndarray
    role: str
    grid: GridSpec

    def segment(self, t: float) -> SegmentPath:
        i = self.grid.index_of(t)
        m = self.grid.m
        return SegmentPath(self.values[i - m : i + 1], self.grid.dt)

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]


def _seg_vals(seg: SegmentPath) -> np.ndarray:
    v = seg.values
    return v if v.ndim == 3 else v[:, None, :]


class _Linearization:
    """Derivative data of drift and diffusion along a fixed trajectory."""

    def __init__(self, spec: ModelSpec, traj: Trajectory):
        g = traj.grid
        # arrays only: holding the trajectory itself would form a cycle with its cache
        self.spec, self.X, self.dW, self.grid = spec, traj.X, traj.noise.dW, g
        self.taps = spec.drift.taps(g.dt, g.m)
        self.packed = pack_taps(self.taps, spec.dim)
        self.eA = np.exp(spec.lam * g.dt)
        self.sat = traj.sat if traj.sat is not None else sat(traj.X)
        self._D = None

    @property
    def D(self):
        """dsat(X) over the whole history (computed on first use)."""
        if self._D is None:
            self._D = 1.0 - self.sat**2
        return self._D

    def drift_all(self, Y, start=0):
        """grad F(X_{t_k})[Y_{t_k}] for k = start..K-1 at once."""
        m, K = self.grid.m, self.grid.K
        lo, hi = m + start, m + K
        total = 0.0
        for lag, coef, nl in self.taps:
            v = Y[lo - lag : hi - lag]
            if nl:
                v = self.D[lo - lag : hi - lag] * v
            total = total + apply_coef(coef, v)
        if np.isscalar(total):
            total = np.zeros((K - start,) + np.broadcast_shapes(Y.shape[1:], self.X.shape[1:]))
        return total

    def recurse(self, init, forcing=None, damping=None, stop=None):
        """Y_{k+1} = rho_k e^{dt A}[Y_k + grad F[Y_{t_k}] dt + (grad_{Y_k} sigma) dW_k + forcing_k dt]."""
        g = self.grid
        m, K, dt = g.m, g.K, g.dt
        X = self.X
        Y = np.zeros(X.shape)
        Y[: m + 1] = init
        stop = K if stop is None else stop
        diff = self.spec.diffusion
        gain = diff.state_dependent
        lags, mats, diag, nl = self.packed
        fo = _EMPTY3 if forcing is None else np.ascontiguousarray(np.broadcast_to(forcing, (K,) + X.shape[1:]), dtype=float)
        da = _EMPTY1 if damping is None else np.ascontiguousarray(damping, dtype=float)
        linear_steps(
            Y, self.sat, np.ascontiguousarray(self.dW[:K]), self.eA, lags, mats, diag, nl, dt, m, stop,
            gain, diff.s1 if gain else _EMPTY1, fo, forcing is not None, da, damping is not None,
        )
        return Y


def linearize(spec: ModelSpec, traj: Trajectory) -> _Linearization:
    """Linearization along ``traj``, cached on the trajectory for reuse."""
    cached = getattr(traj, "_linearization", None)
    if cached is not None and cached.spec is spec:
        return cached
    lin = _Linearization(spec, traj)
    traj._linearization = lin
    return lin


def upsilon_path(spec: ModelSpec, eta: SegmentPath, u: ControlFunction, grid: GridSpec) -> AuxPath:
    """Upsilon(t) = u(t) e^{tA} eta(0) for t > 0 and eta(t) on [-tau, 0]; deterministic."""
    if spec.noise_kind != "additive":
        raise ValueError("upsilon is defined for additive noise")
    m, K = grid.m, grid.K
    vals = np.zeros((grid.length, 1, spec.dim))
    vals[: m + 1, 0] = eta.values
    t = np.arange(1, K + 1) * grid.dt
    vals[m + 1 :, 0] = u.u[1:, None] * np.exp(np.outer(t, spec.lam)) * eta.values[-1]
    return AuxPath(vals, "upsilon", grid)


def tangent_path(spec: ModelSpec, traj: Trajectory, eta: SegmentPath) -> AuxPath:
    """Derivative of the solution in the initial segment along eta (same scheme, same noise)."""
    _match(traj, eta)
    lin = linearize(spec, traj)
    return AuxPath(lin.recurse(_seg_vals(eta)), "tangent", traj.grid)


def malliavin_path(spec: ModelSpec, traj: Trajectory, hdot: IntegrandPath) -> AuxPath:
    """Derivative of the solution along the noise shift W -> W + eps h; zero initial segment."""
    g = traj.grid
    vals = hdot.values
    if vals.shape[0] != g.K:
        raise ValueError("integrand does not match the grid")
    lin = linearize(spec, traj)
    forcing = spec.diffusion.apply(traj.X[g.m : g.m + g.K], vals)
    return AuxPath(lin.recurse(0.0, forcing=forcing), "malliavin", g)


def z_path(spec: ModelSpec, traj: Trajectory, eta: SegmentPath, u: ControlFunction) -> AuxPath:
    """Damped linearized process that reaches zero at T - tau.

    On [0, T - tau) the stiff term -Z/u is integrated exactly per step:
    the whole exponential-Euler update is multiplied by
    exp(-int ds/u), which is u(t_{k+1})/u(t_k) for the linear control and
    vanishes on the step that lands on T - tau.  Z = 0 from there on.
    """
    if u.theta_p is None or not u.theta_p > 0:
        raise ValueError("Z needs a multiplicative control with theta_p > 0")
    if u.damping is None:
        raise ValueError("control is not positive on [0, T - tau)")
    _match(traj, eta)
    g = traj.grid
    lin = linearize(spec, traj)
    Y = lin.recurse(_seg_vals(eta), damping=u.damping, stop=g.k_cut)
    Y[g.m + g.k_cut :] = 0.0
    return AuxPath(Y, "z", g)


def additive_hdot(spec: ModelSpec, traj: Trajectory, upsilon: AuxPath, u: ControlFunction, eta: SegmentPath) -> IntegrandPath:
    """hdot(t) = sigma^{-1}{grad F(X_t)[Upsilon_t] - u'(t) e^{tA} eta(0)}."""
    g = traj.grid
    lin = linearize(spec, traj)
    dF = lin.drift_all(upsilon.values)
    t = np.arange(g.K) * g.dt
    free = u.udot[:, None] * np.exp(np.outer(t, spec.lam)) * eta.values[-1]
    vals = spec.diffusion.apply_inverse(traj.X[g.m : g.m + g.K], dF - free[:, None, :])
    vals = np.broadcast_to(vals, (g.K, traj.n_paths, spec.dim)).copy()
    norms = np.linalg.norm(vals, axis=-1)
    return IntegrandPath(vals, {"max_integrand_norm": float(np.max(norms)) if norms.size else 0.0})


def multiplicative_hdot(spec: ModelSpec, traj: Trajectory, z: AuxPath, u: ControlFunction) -> IntegrandPath:
    """hdot(t) = sigma^{-1}(X(t)){Z(t)/u(t) before T - tau; grad F(X_t)[Z_t] after}.

    u is read at the left node of each step, so the last step before T - tau
    divides by u = dt for the linear control.
    """
    g = traj.grid
    m, K, kc = g.m, g.K, g.k_cut
    if np.any(u.u[:kc] <= 0):
        raise ZeroDivisionError("control vanishes inside [0, T - tau)")
    Zk = z.values[m : m + K]
    inner = np.empty_like(Zk)
    inner[:kc] = Zk[:kc] / u.u[:kc, None, None]
    if kc < K:
        inner[kc:] = linearize(spec, traj).drift_all(z.values, start=kc)
    vals = spec.diffusion.apply_inverse(traj.X[m : m + K], inner)
    ratio = np.linalg.norm(Zk[:kc], axis=-1) / u.u[:kc, None]
    diag = {
        "max_z_over_u": float(np.max(ratio)) if ratio.size else 0.0,
        "max_integrand_norm": float(np.max(np.linalg.norm(vals, axis=-1))),
    }
    return IntegrandPath(vals, diag)


def z_over_u_integral(z: AuxPath, u: ControlFunction, p: float = 2.0) -> np.ndarray:
    """Per-path left-point sum of ||Z(t)||^p / u(t)^p dt over [0, T - tau)."""
    g = z.grid
    kc = g.k_cut
    Zk = z.values[g.m : g.m + kc]
    r = np.linalg.norm(Zk, axis=-1) / u.u[:kc, None]
    return np.sum(r**p, axis=0) * g.dt


def segment_sup_norms(aux_values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """||Y_{t_k}||_inf for k = 0..K, shape ``(K+1, n)`` (sliding maximum over the window)."""
    from scipy.ndimage import maximum_filter1d

    norms = np.linalg.norm(aux_values, axis=-1)
    size = grid.m + 1
    # centred filter: output i covers [i - size//2, i - size//2 + size - 1]
    centred = maximum_filter1d(norms, size=size, axis=0, mode="nearest")
    start = size // 2
    return centred[start : start + grid.K + 1]


def _match(traj: Trajectory, seg: SegmentPath):
    if seg.values.shape[0] != traj.grid.m + 1 or abs(seg.step - traj.grid.dt) > 1e-15:
        raise ValueError("segment does not match the trajectory grid")
