"""Bismut minus CRN finite differences as dt shrinks, multiplicative noise.

The multiplicative estimator carries an O(dt) bias from the tangent /
Malliavin mismatch at T; this prints the difference per grid level.

    python3 scripts/bias_study.py [scenario] [--n-paths N]
"""

import argparse

from delaybismut import oracles
from delaybismut.config import golden_path, load_scenario
from delaybismut.experiments import gradient_estimate
from delaybismut.mc import combined_se


def study(name, levels, n_paths):
    sc = load_scenario(golden_path(name))
    mc = sc.mc.with_(n_paths=n_paths)
    print(f"{'dt':>8} {'bismut':>10} {'fd':>10} {'diff':>10} {'comb_se':>9}")
    for m in levels:
        g = sc.grid_with(m=m)
        b = gradient_estimate(sc, grid=g, mc=mc)
        fd = oracles.fd_gradient(sc.model, g, sc.segment("xi", g), sc.segment("eta", g), sc.functional, mc, eps=1e-3)
        print(f"{g.dt:>8.4f} {b.value:>10.5f} {fd.value:>10.5f} {b.value - fd.value:>10.5f} {combined_se(b, fd):>9.5f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("name", nargs="?", default="mult-diagonal-d1")
    ap.add_argument("--levels", type=int, nargs="+", default=[25, 50, 100, 200])
    ap.add_argument("--n-paths", type=int, default=100_000)
    a = ap.parse_args()
    study(a.name, a.levels, a.n_paths)
