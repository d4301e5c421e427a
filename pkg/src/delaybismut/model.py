"""Truncated model: diagonal generator, delay drift, diffusion, test functionals.

The state space H is R^d with the Euclidean norm.  A is diagonal with
eigenvalues ``lam``; the drift F acts on segments through a small set of
grid-aligned "taps" (instantaneous node, fully delayed node, optional
point delays in between); sigma is either constant or diagonal with a
tanh-saturated state dependence.

Array conventions used throughout the package: a segment is an array whose
*first* axis runs over the m+1 nodes theta = -tau, ..., 0 and whose *last*
axis is the state coordinate.  Any axes in between are batch (path) axes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy import integrate


class ModelValidationError(ValueError):
    """Structurally invalid model specification."""


class GridMismatchError(ValueError):
    pass


def sat(x):
    return np.tanh(x)


def dsat(x):
    return 1.0 - np.tanh(x) ** 2


def _as_matrix(value, d: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(d)
    if arr.shape != (d, d):
        raise ModelValidationError(f"{name} must be a scalar or a {d}x{d} matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ModelValidationError(f"{name} has non-finite entries")
    return arr


def _as_vector(value, d: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(d, float(arr))
    if arr.shape != (d,):
        raise ModelValidationError(f"{name} must be a scalar or a length-{d} vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ModelValidationError(f"{name} has non-finite entries")
    return arr


def _opnorm(mat: np.ndarray) -> float:
    return float(np.linalg.norm(mat, 2))


@dataclass(frozen=True)
class DriftSpec:
    """Drift F(xi) on segments.

    ``linear_delay``:       F = B0 xi(0) + B1 xi(-tau)
    ``bounded_nonlinear``:  F = B0 xi(0) + B1 xi(-tau) + G0 sat(xi(0)) + G1 sat(xi(-tau))
                                + sum_j w_j sat(xi(theta_j))

    For ``bounded_nonlinear`` the linear matrices default to zero; they are
    kept so that the pseudo-contractive shift can be expressed.  Point delays
    are ``(theta_j, w_j)`` pairs with -tau < theta_j < 0.
    """

    kind: str
    B0: np.ndarray
    B1: np.ndarray
    G0: np.ndarray | None = None
    G1: np.ndarray | None = None
    delay_weights: tuple[tuple[float, float], ...] = ()

    @classmethod
    def linear_delay(cls, d, B0=0.0, B1=0.0):
        return cls("linear_delay", _as_matrix(B0, d, "B0"), _as_matrix(B1, d, "B1"))

    @classmethod
    def bounded_nonlinear(cls, d, G0=0.0, G1=0.0, delay_weights=(), B0=0.0, B1=0.0):
        weights = tuple((float(th), float(w)) for th, w in delay_weights)
        return cls(
            "bounded_nonlinear",
            _as_matrix(B0, d, "B0"),
            _as_matrix(B1, d, "B1"),
            _as_matrix(G0, d, "G0"),
            _as_matrix(G1, d, "G1"),
            weights,
        )

    @property
    def dim(self) -> int:
        return self.B0.shape[0]

    @property
    def lipschitz(self) -> float:
        """Bound L_F on the operator norm of the Frechet derivative (sup-norm on segments)."""
        bound = _opnorm(self.B0) + _opnorm(self.B1)
        if self.kind == "bounded_nonlinear":
            bound += _opnorm(self.G0) + _opnorm(self.G1)
            bound += sum(abs(w) for _, w in self.delay_weights)
        return bound

    def taps(self, dt: float, m: int) -> list[tuple[int, object, bool]]:
        """Resolve the drift into ``(lag, coefficient, nonlinear)`` triples on a grid.

        ``lag`` counts steps back from the current node.  A coefficient is a
        scalar, a vector (diagonal matrix) or a full matrix.
        """
        out = []
        for lag, mat, nonlinear in (
            (0, self.B0, False),
            (m, self.B1, False),
            (0, self.G0, True),
            (m, self.G1, True),
        ):
            if mat is None or not np.any(mat):
                continue
            out.append((lag, _compact(mat), nonlinear))
        if self.kind == "bounded_nonlinear":
            tau = m * dt
            for theta, w in self.delay_weights:
                if w == 0.0:
                    continue
                lag = _grid_lag(theta, dt, tau)
                out.append((lag, float(w), True))
        return out


def _grid_lag(theta: float, dt: float, tau: float) -> int:
    if not -tau - 1e-12 <= theta <= 1e-12:
        raise GridMismatchError(f"delay node theta={theta} outside [-tau, 0]")
    lag = round(-theta / dt)
    if abs(lag * dt + theta) > 1e-9 * max(1.0, tau):
        raise GridMismatchError(f"delay node theta={theta} is not aligned with step {dt}")
    return int(lag)


def _compact(mat: np.ndarray):
    diag = np.diag(mat)
    if np.count_nonzero(mat - np.diag(diag)) == 0:
        if np.all(diag == diag[0]):
            return float(diag[0])
        return diag.copy()
    return mat.copy()


def apply_coef(coef, x):
    """Multiply state vectors ``x[..., d]`` by a compact coefficient."""
    if isinstance(coef, float) or np.ndim(coef) == 1:
        return coef * x
    return x @ coef.T


@dataclass(frozen=True)
class DiffusionSpec:
    """Noise coefficient sigma(x).

    ``constant``:             sigma(x) = S  (S invertible)
    ``diagonal_saturating``:  sigma(x) = diag(s0 + s1 * sat(x)),  |s1| < s0
    """

    kind: str
    S: np.ndarray | None = None
    s0: np.ndarray | None = None
    s1: np.ndarray | None = None

    @classmethod
    def constant(cls, d, S):
        mat = _as_matrix(S, d, "S")
        svals = np.linalg.svd(mat, compute_uv=False)
        if svals[-1] <= 1e-12 * max(1.0, svals[0]):
            raise ModelValidationError("constant diffusion matrix S is singular")
        return cls("constant", S=mat)

    @classmethod
    def diagonal_saturating(cls, d, s0, s1):
        s0 = _as_vector(s0, d, "s0")
        s1 = _as_vector(s1, d, "s1")
        if np.any(np.abs(s1) >= s0):
            raise ModelValidationError("diagonal_saturating requires |s1_i| < s0_i for every i")
        return cls("diagonal_saturating", s0=s0, s1=s1)

    @property
    def dim(self) -> int:
        return self.S.shape[0] if self.kind == "constant" else self.s0.shape[0]

    @property
    def state_dependent(self) -> bool:
        return self.kind != "constant"

    @property
    def lipschitz(self) -> float:
        """Bound L_sigma with ||grad_v sigma(x)||_HS <= L_sigma ||v||."""
        if self.kind == "constant":
            return 0.0
        return float(np.max(np.abs(self.s1)))

    @property
    def inverse_bound(self) -> float:
        """sup_x ||sigma(x)^{-1}|| (operator norm)."""
        if self.kind == "constant":
            return float(1.0 / np.linalg.svd(self.S, compute_uv=False)[-1])
        return float(1.0 / np.min(self.s0 - np.abs(self.s1)))

    # Batched helpers.  ``x`` and ``v`` are ``(..., d)`` arrays.

    def diag_entries(self, x):
        return self.s0 + self.s1 * sat(x)

    def apply(self, x, v):
        """sigma(x) v"""
        if self.kind == "constant":
            return v @ self.S.T
        return self.diag_entries(x) * v

    def apply_inverse(self, x, v):
        """sigma(x)^{-1} v"""
        if self.kind == "constant":
            return v @ self._S_inv.T
        return v / self.diag_entries(x)

    def apply_derivative(self, x, direction, v):
        """(grad_direction sigma(x)) v"""
        if self.kind == "constant":
            return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(direction), np.shape(v)))
        return self.s1 * dsat(x) * direction * v

    @property
    def _S_inv(self):
        inv = self.__dict__.get("_inv_cache")
        if inv is None:
            inv = np.linalg.inv(self.S)
            object.__setattr__(self, "_inv_cache", inv)
        return inv


NOISE_KINDS = ("additive", "multiplicative")


@dataclass(frozen=True)
class ModelSpec:
    """Galerkin-truncated functional SPDE  dX = {AX + F(X_t)}dt + sigma(X)dW.

    ``lam`` holds the eigenvalues of A (units 1/time).  Positive entries are
    allowed at construction so that :func:`normalize_pseudocontractive` can
    act on them; :func:`validate_assumptions` flags them.
    """

    lam: np.ndarray
    tau: float
    drift: DriftSpec
    diffusion: DiffusionSpec
    a4_alpha: float = 0.25
    noise_kind: str = "additive"

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        object.__setattr__(self, "lam", lam)
        d = lam.shape[0]
        if lam.ndim != 1 or d < 1:
            raise ModelValidationError("eigenvalues must be a non-empty vector")
        if not np.all(np.isfinite(lam)):
            raise ModelValidationError("eigenvalues must be finite")
        if not self.tau > 0:
            raise ModelValidationError("delay tau must be positive")
        if not 0.0 < self.a4_alpha < 0.5:
            raise ModelValidationError("a4_alpha must lie in (0, 1/2)")
        if self.noise_kind not in NOISE_KINDS:
            raise ModelValidationError(f"noise_kind must be one of {NOISE_KINDS}")
        if self.drift.dim != d or self.diffusion.dim != d:
            raise ModelValidationError("drift/diffusion dimension does not match the number of eigenvalues")
        if self.noise_kind == "additive" and self.diffusion.state_dependent:
            raise ModelValidationError("additive noise requires a state-independent (constant) diffusion")

    @property
    def dim(self) -> int:
        return self.lam.shape[0]

    def with_(self, **changes) -> "ModelSpec":
        return dataclasses.replace(self, **changes)


@dataclass
class AssumptionReport:
    checks: dict[str, bool]
    details: dict[str, str]
    a4_integral: float
    drift_lipschitz: float
    sigma_lipschitz: float
    sigma_inverse_bound: float

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    @property
    def failures(self) -> list[str]:
        return [k for k, ok in self.checks.items() if not ok]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": dict(self.checks),
            "details": dict(self.details),
            "a4_integral": self.a4_integral,
            "drift_lipschitz": self.drift_lipschitz,
            "sigma_lipschitz": self.sigma_lipschitz,
            "sigma_inverse_bound": self.sigma_inverse_bound,
        }


def a4_integral(spec: ModelSpec, upper: float = 1.0) -> float:
    """int_0^upper s^{-2 alpha} ||e^{sA} sigma(0)||_HS^2 ds by weighted quadrature."""
    d = spec.dim
    sig0 = spec.diffusion.apply(np.zeros(d), np.eye(d)).T  # columns sigma(0) e_j
    row_sq = np.sum(sig0**2, axis=1)  # ||e^{sA} sigma||_HS^2 = sum_i e^{2 lam_i s} row_i^2

    def integrand(s):
        return float(np.sum(np.exp(2.0 * spec.lam * s) * row_sq))

    val, _ = integrate.quad(
        integrand, 0.0, upper, weight="alg", wvar=(-2.0 * spec.a4_alpha, 0.0), epsabs=1e-14, epsrel=1e-13, limit=200
    )
    return float(val)


def validate_assumptions(spec: ModelSpec) -> AssumptionReport:
    """Finite-dimensional surrogates of the standing assumptions.

    Failures are listed in the report, never raised.
    """
    checks, details = {}, {}
    max_lam = float(np.max(spec.lam))
    checks["A1"] = max_lam <= 0.0
    details["A1"] = f"max eigenvalue {max_lam:g} (contractive semigroup iff <= 0)"

    lf = spec.drift.lipschitz
    checks["A2"] = bool(np.isfinite(lf))
    details["A2"] = f"drift derivative bound L_F = {lf:g}"

    ls = spec.diffusion.lipschitz
    inv = spec.diffusion.inverse_bound
    checks["A3"] = bool(np.isfinite(ls) and np.isfinite(inv))
    details["A3"] = f"L_sigma = {ls:g} (Frobenius), sup ||sigma^-1|| = {inv:g}"

    val = a4_integral(spec)
    checks["A4"] = bool(np.isfinite(val) and 0.0 < spec.a4_alpha < 0.5)
    details["A4"] = f"alpha = {spec.a4_alpha:g}, integral over [0,1] = {val:.12g}"

    if spec.noise_kind == "additive":
        checks["additive_constant_sigma"] = not spec.diffusion.state_dependent
        details["additive_constant_sigma"] = "additive noise needs constant sigma"
    return AssumptionReport(checks, details, val, lf, ls, inv)


def normalize_pseudocontractive(spec: ModelSpec) -> ModelSpec:
    """Shift A -> A - a0 and F -> F + a0 xi(0) with a0 = max eigenvalue.

    Returns ``spec`` itself when it is already contractive.
    """
    a0 = float(np.max(spec.lam))
    if a0 <= 0.0:
        return spec
    d = spec.dim
    drift = dataclasses.replace(spec.drift, B0=spec.drift.B0 + a0 * np.eye(d))
    return spec.with_(lam=spec.lam - a0, drift=drift)


def _check_segments(seg, direction=None):
    if direction is not None:
        if seg.step != direction.step or seg.values.shape[0] != direction.values.shape[0]:
            raise GridMismatchError("segment and direction live on different grids")


def _taps_for(drift: DriftSpec, seg) -> list:
    m = seg.values.shape[0] - 1
    return drift.taps(seg.step, m)


def drift_from_nodes(taps, node):
    """F evaluated from a node accessor ``node(lag) -> (..., d)`` array."""
    total = 0.0
    for lag, coef, nonlinear in taps:
        x = node(lag)
        total = total + apply_coef(coef, sat(x) if nonlinear else x)
    return total


def drift_derivative_from_nodes(taps, node, dnode):
    """grad F in the direction given by ``dnode(lag)``; ``node`` gives the base point."""
    total = 0.0
    for lag, coef, nonlinear in taps:
        v = dnode(lag)
        if nonlinear:
            v = dsat(node(lag)) * v
        total = total + apply_coef(coef, v)
    return total


def eval_drift(drift: DriftSpec, seg) -> np.ndarray:
    """F(seg) for a :class:`~delaybismut.pathsim.SegmentPath`."""
    vals = seg.values
    m = vals.shape[0] - 1
    out = drift_from_nodes(_taps_for(drift, seg), lambda lag: vals[m - lag])
    return np.broadcast_to(out, vals.shape[1:]).copy()


def eval_drift_derivative(drift: DriftSpec, seg, direction) -> np.ndarray:
    """grad F(seg)[direction]; both segments must share a grid."""
    _check_segments(seg, direction)
    vals, dvals = seg.values, direction.values
    m = vals.shape[0] - 1
    out = drift_derivative_from_nodes(_taps_for(drift, seg), lambda lag: vals[m - lag], lambda lag: dvals[m - lag])
    return np.broadcast_to(out, np.broadcast_shapes(vals.shape[1:], dvals.shape[1:])).copy()


def eval_sigma(diff: DiffusionSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if diff.kind == "constant":
        return diff.S.copy()
    return np.diag(diff.diag_entries(x))


def eval_sigma_inverse(diff: DiffusionSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if diff.kind == "constant":
        return diff._S_inv.copy()
    return np.diag(1.0 / diff.diag_entries(x))


def eval_sigma_derivative(diff: DiffusionSpec, x, v) -> np.ndarray:
    """The matrix grad_v sigma(x)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if diff.kind == "constant":
        return np.zeros((diff.dim, diff.dim))
    return np.diag(diff.s1 * dsat(x) * v)


def semigroup_apply(spec: ModelSpec, t: float, v) -> np.ndarray:
    """e^{tA} v for the diagonal generator."""
    if t < 0:
        raise ValueError("semigroup time must be non-negative")
    return np.exp(spec.lam * t) * np.asarray(v, dtype=float)


FUNCTIONAL_KINDS = ("linear_endpoint", "bounded_smooth", "positive_bounded", "indicator")


@dataclass(frozen=True)
class TestFunctional:
    """Path functional f(xi) reading xi(0) and optionally xi(-tau/2).

    With z = v.xi(0) + v_mid.xi(-tau/2) + offset:

    - ``linear_endpoint``:   f = z
    - ``bounded_smooth``:    f = scale * tanh(z)
    - ``positive_bounded``:  f = lo + (hi - lo) (1 + tanh z) / 2, values in (lo, hi), lo > 0
    - ``indicator``:         f = 1{z > 0}  (no gradient rule)
    """

    __test__ = False  # keep pytest from collecting this class

    kind: str
    v: np.ndarray
    v_mid: np.ndarray | None = None
    offset: float = 0.0
    scale: float = 1.0
    lo: float = 0.5
    hi: float = 1.5

    def __post_init__(self):
        if self.kind not in FUNCTIONAL_KINDS:
            raise ModelValidationError(f"functional kind must be one of {FUNCTIONAL_KINDS}")
        object.__setattr__(self, "v", np.atleast_1d(np.asarray(self.v, dtype=float)))
        if self.v_mid is not None:
            object.__setattr__(self, "v_mid", np.atleast_1d(np.asarray(self.v_mid, dtype=float)))
        if self.kind == "positive_bounded" and not 0.0 < self.lo < self.hi:
            raise ModelValidationError("positive_bounded needs 0 < lo < hi")

    @property
    def has_gradient(self) -> bool:
        return self.kind != "indicator"

    @property
    def bounds(self) -> tuple[float, float]:
        if self.kind == "positive_bounded":
            return self.lo, self.hi
        if self.kind == "bounded_smooth":
            return -abs(self.scale), abs(self.scale)
        if self.kind == "indicator":
            return 0.0, 1.0
        return -np.inf, np.inf

    def _z(self, vals):
        m = vals.shape[0] - 1
        z = vals[m] @ self.v + self.offset
        if self.v_mid is not None:
            if m % 2:
                raise GridMismatchError("reading xi(-tau/2) requires an even number of delay steps m")
            z = z + vals[m // 2] @ self.v_mid
        return z

    def _dz(self, dvals):
        m = dvals.shape[0] - 1
        dz = dvals[m] @ self.v
        if self.v_mid is not None:
            dz = dz + dvals[m // 2] @ self.v_mid
        return dz

    def evaluate_values(self, vals):
        """f on raw segment arrays ``(m+1, ..., d)``; returns the batch shape."""
        z = self._z(vals)
        if self.kind == "linear_endpoint":
            return z
        if self.kind == "bounded_smooth":
            return self.scale * np.tanh(z)
        if self.kind == "positive_bounded":
            return self.lo + (self.hi - self.lo) * 0.5 * (1.0 + np.tanh(z))
        return (z > 0).astype(float)

    def gradient_values(self, vals, dvals):
        """<grad f(vals), dvals>."""
        if not self.has_gradient:
            raise ValueError(f"functional kind {self.kind!r} has no gradient rule")
        dz = self._dz(dvals)
        if self.kind == "linear_endpoint":
            return np.broadcast_to(dz, np.broadcast_shapes(np.shape(dz), np.shape(self._z(vals)))).copy()
        z = self._z(vals)
        if self.kind == "bounded_smooth":
            return self.scale * (1.0 - np.tanh(z) ** 2) * dz
        return (self.hi - self.lo) * 0.5 * (1.0 - np.tanh(z) ** 2) * dz

    def __call__(self, seg):
        return self.evaluate_values(seg.values)

    def gradient(self, seg, direction):
        _check_segments(seg, direction)
        return self.gradient_values(seg.values, direction.values)
