"""Path-parallel Monte Carlo plumbing shared by the estimators and oracles.

Paths are cut into fixed batches that depend only on the path count and
the grid, never on the worker count; per-path results are concatenated in
path order before any reduction, so every estimate is bitwise independent
of scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .pathsim import GridSpec, sample_noise

BATCH_ELEMENTS = 1 << 20


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class MCConfig:
    n_paths: int
    seed: int = 0
    antithetic: bool = False
    threads: int = 1
    batch_size: int | None = None
    max_fail_fraction: float = 1e-3

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError("need at least two paths")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even number of paths")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def with_(self, **changes) -> "MCConfig":
        return replace(self, **changes)


@dataclass
class GradientEstimate:
    value: float
    std_error: float
    n_paths: int
    method: str
    diagnostics: dict = field(default_factory=dict)
    n_failed: int = 0
    samples: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "std_error": self.std_error,
            "n_paths": self.n_paths,
            "method": self.method,
            "n_failed": self.n_failed,
            "diagnostics": dict(self.diagnostics),
        }


def batch_bounds(n_paths: int, grid: GridSpec, d: int, batch_size: int | None = None, antithetic: bool = False):
    if batch_size is None:
        batch_size = max(64, BATCH_ELEMENTS // (grid.length * d))
    if antithetic and batch_size % 2:
        batch_size += 1
    batch_size = min(batch_size, n_paths)
    return [(s, min(s + batch_size, n_paths)) for s in range(0, n_paths, batch_size)]


def noise_for(grid: GridSpec, d: int, mc: MCConfig, start: int, stop: int, seed_offset: int = 0):
    """Noise for paths [start, stop); antithetic pairs share a stream with opposite signs."""
    idx = np.arange(start, stop)
    seed = mc.seed + seed_offset
    if mc.antithetic:
        return sample_noise(grid, d, seed, idx // 2, signs=np.where(idx % 2, -1.0, 1.0))
    return sample_noise(grid, d, seed, idx)


def run_paths(mc: MCConfig, grid: GridSpec, d: int, kernel, seed_offset: int = 0) -> dict[str, np.ndarray]:
    """Apply ``kernel(noise) -> {name: per-path array}`` over all batches, in path order."""
    bounds = batch_bounds(mc.n_paths, grid, d, mc.batch_size, mc.antithetic)

    def work(b):
        return kernel(noise_for(grid, d, mc, b[0], b[1], seed_offset))

    if mc.threads == 1 or len(bounds) == 1:
        parts = [work(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=mc.threads) as pool:
            parts = list(pool.map(work, bounds))
    return {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}


def usable(mc: MCConfig, ok: np.ndarray) -> np.ndarray:
    """Mask of paths kept after excluding failures (whole pairs under antithetic sampling)."""
    ok = np.asarray(ok, dtype=bool)
    if mc.antithetic:
        pair_ok = ok.reshape(-1, 2).all(axis=1)
        ok = np.repeat(pair_ok, 2)
    n_failed = int(np.count_nonzero(~ok))
    if n_failed > mc.max_fail_fraction * ok.size:
        raise EstimationError(f"{n_failed} of {ok.size} paths failed to integrate")
    return ok


def mean_and_se(values: np.ndarray, mc: MCConfig, mask: np.ndarray | None = None) -> tuple[float, float, np.ndarray]:
    """Sample mean and standard error; antithetic pairs are averaged first."""
    if mask is not None:
        values = values[mask]
    if mc.antithetic:
        values = values.reshape(-1, 2).mean(axis=1)
    n = values.size
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return mean, se, values


def summarize(values, ok, mc: MCConfig, method: str, diagnostics=None) -> GradientEstimate:
    mask = usable(mc, ok)
    mean, se, effective = mean_and_se(values, mc, mask)
    return GradientEstimate(
        value=mean,
        std_error=se,
        n_paths=int(np.count_nonzero(mask)),
        method=method,
        diagnostics=dict(diagnostics or {}),
        n_failed=int(np.count_nonzero(~mask)),
        samples=effective,
    )


def combined_se(*estimates) -> float:
    return math.sqrt(sum(e.std_error**2 for e in estimates))


def agree(a, b, n_se: float = 3.0, allowance: float = 0.0) -> bool:
    """|a - b| within ``n_se`` combined standard errors plus a bias allowance."""
    va = a.value if hasattr(a, "value") else float(a)
    vb = b.value if hasattr(b, "value") else float(b)
    ests = [e for e in (a, b) if hasattr(e, "std_error")]
    return abs(va - vb) <= n_se * combined_se(*ests) + allowance
