"""Run every golden scenario (or a subset) through the CLI and time it.

    python3 scripts/run_golden.py [--n-paths N] [--out DIR] [names...]
"""

import argparse
import time
from pathlib import Path

from delaybismut.cli import main
from delaybismut.config import GOLDEN


def run(names, n_paths, out):
    rows = []
    for name in names:
        args = ["run", name, "--out", str(Path(out) / name)]
        if n_paths:
            args += ["--n-paths", str(n_paths)]
        t0 = time.perf_counter()
        code = main(args + ["--check"])
        rows.append((name, code, time.perf_counter() - t0))
    print(f"\n{'scenario':<20} {'exit':>4} {'seconds':>8}")
    for name, code, sec in rows:
        print(f"{name:<20} {code:>4} {sec:>8.1f}")
    return rows


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("names", nargs="*", default=list(GOLDEN))
    ap.add_argument("--n-paths", type=int)
    ap.add_argument("--out", default="out")
    a = ap.parse_args()
    run(a.names, a.n_paths, a.out)
