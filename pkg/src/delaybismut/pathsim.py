"""Time grids, Brownian increment streams and the mild-solution integrator.

History arrays are time-major: ``X[i]`` is the state at t_{i-m}, so index
``m + k`` holds t_k and the segment X_{t_k} is ``X[k : k + m + 1]``.  The
shape is ``(K + m + 1, n_paths, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import _EMPTY1, _EMPTY3, mild_steps, pack_taps
from .model import ModelSpec, drift_from_nodes


class GridError(ValueError):
    pass


class IntegrationError(FloatingPointError):
    """Non-finite state encountered; ``step`` is the first offending step index."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class GridSpec:
    tau: float
    T: float
    m: int
    K: int

    @property
    def dt(self) -> float:
        return self.tau / self.m

    @property
    def k_cut(self) -> int:
        """Index of the node T - tau."""
        return self.K - self.m

    @property
    def times(self) -> np.ndarray:
        """t_k for k = -m .. K."""
        return np.arange(-self.m, self.K + 1) * self.dt

    @property
    def length(self) -> int:
        return self.K + self.m + 1

    def refined(self, factor: int = 2) -> "GridSpec":
        return make_grid(self.tau, self.T, self.m * factor)

    def index_of(self, t: float) -> int:
        """History index of the grid node t; off-grid times raise."""
        k = round(t / self.dt)
        if abs(k * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise GridError(f"time {t} is not a grid node (step {self.dt})")
        if not -self.m <= k <= self.K:
            raise GridError(f"time {t} outside [-tau, T]")
        return k + self.m


def make_grid(tau: float, T: float, m: int) -> GridSpec:
    if not (tau > 0 and T > tau):
        raise GridError("need T > tau > 0")
    if int(m) != m or m < 1:
        raise GridError("m must be a positive integer")
    m = int(m)
    dt = tau / m
    ratio = T / dt
    K = round(ratio)
    if abs(K - ratio) > 1e-9 * max(1.0, ratio):
        raise GridError(f"T={T} is not an integer multiple of the step tau/m={dt}")
    return GridSpec(float(tau), float(T), m, int(K))


@dataclass
class SegmentPath:
    """Segment on the nodes theta = -tau, -tau+dt, ..., 0 (node axis first)."""

    values: np.ndarray
    step: float

    @property
    def m(self) -> int:
        return self.values.shape[0] - 1

    @property
    def sup_norm(self):
        return np.max(np.linalg.norm(self.values, axis=-1), axis=0)

    def __add__(self, other):
        _same_grid(self, other)
        return SegmentPath(self.values + other.values, self.step)

    def __sub__(self, other):
        _same_grid(self, other)
        return SegmentPath(self.values - other.values, self.step)

    def __mul__(self, c):
        return SegmentPath(self.values * c, self.step)

    __rmul__ = __mul__

    @classmethod
    def constant(cls, grid: GridSpec, value) -> "SegmentPath":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(np.tile(value, (grid.m + 1, 1)), grid.dt)

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> "SegmentPath":
        thetas = np.arange(-grid.m, 1) * grid.dt
        return cls(np.array([np.atleast_1d(fn(th)) for th in thetas], dtype=float), grid.dt)

    @classmethod
    def zeros(cls, grid: GridSpec, d: int) -> "SegmentPath":
        return cls(np.zeros((grid.m + 1, d)), grid.dt)


def _same_grid(a, b):
    if a.values.shape[0] != b.values.shape[0] or abs(a.step - b.step) > 1e-15:
        raise GridError("segments live on different grids")


@dataclass
class NoiseBundle:
    """Increments ``dW[k, path, :]`` over [t_k, t_{k+1}), each N(0, dt I_d)."""

    dW: np.ndarray
    dt: float
    seed: int
    path_index: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.dW.shape[1]

    @property
    def K(self) -> int:
        return self.dW.shape[0]


def path_generator(seed: int, path_index: int) -> np.random.Generator:
    """Counter-based stream for one path: Philox keyed by the seed, path index in the high counter word."""
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, 0, int(path_index)]))


def sample_noise(grid: GridSpec, d: int, seed: int, path_index, signs=None) -> NoiseBundle:
    """Brownian increments for the given path indices.

    Each path's increments depend only on ``(seed, path_index)``; step k of
    a path is the k-th block of its stream, so a longer horizon extends a
    shorter one.  ``signs`` (+1/-1 per path) flips whole paths for antithetic
    pairing.
    """
    idx = np.atleast_1d(np.asarray(path_index, dtype=np.int64))
    dW = np.empty((grid.K, idx.size, d))
    scale = np.sqrt(grid.dt)
    for j, p in enumerate(idx):
        dW[:, j, :] = path_generator(seed, p).standard_normal((grid.K, d))
    dW *= scale
    if signs is not None:
        dW *= np.asarray(signs, dtype=float)[None, :, None]
    return NoiseBundle(dW, grid.dt, int(seed), idx)


def coarsen_noise(noise: NoiseBundle, factor: int = 2) -> NoiseBundle:
    """Sum consecutive increments: the same Brownian path on a grid ``factor`` times coarser."""
    K, n, d = noise.dW.shape
    if K % factor:
        raise GridError("number of steps not divisible by the coarsening factor")
    dW = noise.dW.reshape(K // factor, factor, n, d).sum(axis=1)
    return NoiseBundle(dW, noise.dt * factor, noise.seed, noise.path_index)


@dataclass
class Trajectory:
    """Solution history on [-tau, T]; see the module docstring for layout."""

    X: np.ndarray
    grid: GridSpec
    noise: NoiseBundle
    xi: SegmentPath
    fail_step: np.ndarray = field(default=None)
    picard_distances: list = field(default=None)
    sat: np.ndarray | None = field(default=None, repr=False)  # tanh(X), cached by the integrator

    @property
    def n_paths(self) -> int:
        return self.X.shape[1]

    @property
    def ok(self) -> np.ndarray:
        return self.fail_step < 0

    def at(self, t: float) -> np.ndarray:
        return self.X[self.grid.index_of(t)]

    def raise_on_failure(self):
        if np.any(self.fail_step >= 0):
            step = int(np.min(self.fail_step[self.fail_step >= 0]))
            raise IntegrationError(f"non-finite state at step {step}", step)


def _check_inputs(spec: ModelSpec, xi: SegmentPath, noise: NoiseBundle, grid: GridSpec):
    if xi.values.shape[0] != grid.m + 1 or abs(xi.step - grid.dt) > 1e-15:
        raise GridError("initial segment does not match the grid")
    if xi.values.shape[-1] != spec.dim or noise.dW.shape[-1] != spec.dim:
        raise GridError("dimension mismatch between model, segment and noise")
    if noise.K < grid.K or abs(noise.dt - grid.dt) > 1e-15:
        raise GridError("noise bundle does not cover the grid")
    if abs(spec.tau - grid.tau) > 1e-12:
        raise GridError("grid delay differs from the model delay")


def _init_history(xi: SegmentPath, grid: GridSpec, n: int) -> np.ndarray:
    X = np.empty((grid.length, n, xi.values.shape[-1]))
    vals = xi.values
    X[: grid.m + 1] = vals if vals.ndim == 3 else vals[:, None, :]
    return X


def _failure_steps(X: np.ndarray, m: int) -> np.ndarray:
    bad = ~np.isfinite(X[m + 1 :]).all(axis=2)  # (K, n)
    first = np.argmax(bad, axis=0)
    return np.where(bad.any(axis=0), first, -1)


def _step_loop(spec, grid, X, dW, extra=None):
    """Run the recursion in place; returns tanh(X) when the model reads it, else None."""
    m, K, dt = grid.m, grid.K, grid.dt
    eA = np.exp(spec.lam * dt)
    taps = spec.drift.taps(dt, m)
    lags, mats, diag, nl = pack_taps(taps, spec.dim)
    diff = spec.diffusion
    const = diff.kind == "constant"
    need_sat = bool(nl.any()) or not const
    sat = np.empty_like(X) if need_sat else _EMPTY3
    S = diff.S if const else np.zeros((1, 1))
    s0 = _EMPTY1 if const else diff.s0
    s1 = _EMPTY1 if const else diff.s1
    ex = _EMPTY3 if extra is None else np.ascontiguousarray(np.broadcast_to(extra, (K,) + X.shape[1:]), dtype=float)
    mild_steps(X, sat, need_sat, np.ascontiguousarray(dW[:K]), ex, extra is not None, eA, lags, mats, diag, nl, dt, m, K, const, S, s0, s1)
    return sat if need_sat else None


def integrate_mild(spec: ModelSpec, xi: SegmentPath, noise: NoiseBundle, grid: GridSpec, strict: bool = True) -> Trajectory:
    """Exponential Euler for the mild formulation:

        X(t_{k+1}) = e^{dt A} [X(t_k) + F(X_{t_k}) dt + sigma(X(t_k)) dW_k]

    Drift and diffusion are read at the left node, so X(t_{k+1}) depends on
    dW_0..dW_k only.  With ``strict`` a non-finite state raises
    :class:`IntegrationError`; otherwise failing paths are marked in
    ``fail_step``.
    """
    _check_inputs(spec, xi, noise, grid)
    X = _init_history(xi, grid, noise.n_paths)
    sat = _step_loop(spec, grid, X, noise.dW)
    traj = Trajectory(X, grid, noise, xi, _failure_steps(X, grid.m), sat=sat)
    if strict:
        traj.raise_on_failure()
    return traj


def integrate_shifted(spec: ModelSpec, xi: SegmentPath, noise: NoiseBundle, hdot, eps: float, grid: GridSpec, strict: bool = True) -> Trajectory:
    """Solution driven by W + eps*h, i.e. dW_k replaced with dW_k + eps*hdot(t_k)*dt.

    ``hdot`` is an :class:`~delaybismut.sensitivity.IntegrandPath` (or a
    ``(K, n, d)`` array) on the same grid.
    """
    _check_inputs(spec, xi, noise, grid)
    g = getattr(hdot, "values", hdot)
    if g.shape[0] != grid.K:
        raise GridError("integrand does not match the grid")
    X = _init_history(xi, grid, noise.n_paths)
    if eps == 0.0:
        sat = _step_loop(spec, grid, X, noise.dW)
    else:
        sat = _step_loop(spec, grid, X, noise.dW, extra=(eps * grid.dt) * g)
    traj = Trajectory(X, grid, noise, xi, _failure_steps(X, grid.m), sat=sat)
    if strict:
        traj.raise_on_failure()
    return traj


def segment_at(traj: Trajectory, t: float) -> SegmentPath:
    """The segment X_t, i.e. the m+1 nodes ending at t (0 <= t <= T)."""
    if t < -1e-12:
        raise GridError("segments are defined for t >= 0")
    i = traj.grid.index_of(t)
    m = traj.grid.m
    return SegmentPath(traj.X[i - m : i + 1], traj.grid.dt)


@dataclass
class PicardResult:
    trajectory: Trajectory
    distances: list[float]
    diverged: bool


def picard_reference(spec: ModelSpec, xi: SegmentPath, noise: NoiseBundle, grid: GridSpec, n_iter: int) -> PicardResult:
    """Iterate the discrete fixed-point map

        K(Y)(t_k) = e^{t_k A} xi(0) + sum_{j<k} e^{(t_k - t_j) A} [F(Y_{t_j}) dt + sigma(Y(t_j)) dW_j]

    starting from the constant continuation of xi(0).  The stochastic
    convolution uses the same increments as :func:`integrate_mild`, whose
    output is the exact fixed point.  ``distances[i]`` is the sup-distance
    between iterates i+1 and i.
    """
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    _check_inputs(spec, xi, noise, grid)
    m, K, dt = grid.m, grid.K, grid.dt
    n = noise.n_paths
    taps = spec.drift.taps(dt, m)
    eA = np.exp(spec.lam * dt)
    Y = _init_history(xi, grid, n)
    Y[m + 1 :] = Y[m]
    dW = noise.dW[:K]
    distances = []
    diverged = False
    for _ in range(n_iter):
        # all increments at once: node j reads Y at history indices m + j - lag
        F = drift_from_nodes(taps, lambda lag: Y[m - lag : m - lag + K])
        inc = F * dt + spec.diffusion.apply(Y[m : m + K], dW)
        new = Y.copy()
        for k in range(K):
            new[m + k + 1] = eA * (new[m + k] + inc[k])
        dist = float(np.max(np.linalg.norm(new - Y, axis=-1)))
        distances.append(dist)
        Y = new
        if len(distances) >= 4 and all(distances[-j] > distances[-j - 1] for j in (1, 2, 3)):
            diverged = True
    traj = Trajectory(Y, grid, noise, xi, _failure_steps(Y, m), picard_distances=distances)
    return PicardResult(traj, distances, diverged)
