"""Command line entry point.

    delaybismut list
    delaybismut run <config|golden-name> [--check] [--seed N] [--threads N] [--out DIR]

Exit codes: 0 success, 2 invalid configuration, 3 failed checks under --check.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

from .config import ConfigError, assumption_report, list_golden, load_scenario, resolve
from .experiments import ROW_FIELDS, run_experiment
from .mc import EstimationError
from .model import ModelValidationError

EXIT_OK, EXIT_INVALID, EXIT_CHECK = 0, 2, 3

log = logging.getLogger("delaybismut")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_outputs(res, out: Path, assumptions: dict):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for row in res.rows:
            w.writerow([_fmt(row[k]) for k in ROW_FIELDS])
    report = dict(res.report, assumptions=assumptions)
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=_json_default, allow_nan=True)
        fh.write("\n")
    if res.plotdata:
        pd = out / "plotdata"
        pd.mkdir(exist_ok=True)
        for name, (header, rows) in res.plotdata.items():
            with open(pd / f"{name}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for r in rows:
                    w.writerow([_fmt(v) for v in r])


def _json_default(o):
    if hasattr(o, "tolist"):
        return o.tolist()
    if hasattr(o, "item"):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


def cmd_list(args) -> int:
    for entry in list_golden():
        print(f"{entry['id']:<20} {entry['experiment']:<17} {entry['description']}")
    return EXIT_OK


def cmd_run(args) -> int:
    overrides = {"seed": args.seed, "threads": args.threads, "n_paths": args.n_paths}
    try:
        sc = load_scenario(resolve(args.config), overrides)
        rep = assumption_report(sc)
    except (ConfigError, ModelValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if not rep.passed:
        print(f"error: assumption checks failed: {', '.join(rep.failures)}", file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out or os.environ.get("BISMUT_OUT_DIR") or Path("out") / sc.id)
    t0 = time.perf_counter()
    try:
        res = run_experiment(sc)
    except EstimationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK if args.check else 1
    write_outputs(res, out, rep.to_dict())
    log.info("%s finished in %.1fs, outputs in %s", sc.id, time.perf_counter() - t0, out)
    for c in res.checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {sc.id}  {c['name']}")
    if args.check and not res.passed:
        return EXIT_CHECK
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="delaybismut", description="Bismut gradient estimators for delay SPDEs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="list the bundled golden scenarios")
    r = sub.add_parser("run", help="run a scenario file or golden scenario")
    r.add_argument("config", help="path to a YAML scenario or a golden scenario name")
    r.add_argument("--check", action="store_true", help="exit 3 if any scenario check fails")
    r.add_argument("--seed", type=int, help="override mc.seed")
    r.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    r.add_argument("--n-paths", type=int, dest="n_paths", help="override mc.n_paths")
    r.add_argument("--out", help="output directory (default $BISMUT_OUT_DIR or out/<id>)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "list":
        return cmd_list(args)
    return cmd_run(args)


if __name__ == "__main__":
    sys.exit(main())
