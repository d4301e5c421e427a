"""Experiment orchestration for scenarios: estimates, comparisons and checks.

Every experiment returns long-format result rows, a JSON-ready report,
plot tables and a list of named pass/fail checks.  Nothing here depends on
wall-clock time, so identical inputs give identical outputs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import bismut, inequalities, oracles
from .config import Scenario
from .mc import GradientEstimate, combined_se
from .model import TestFunctional

ROW_FIELDS = ("scenario_id", "method", "quantity", "value", "std_error", "n_paths", "delta_t", "label")


@dataclass
class ExperimentResult:
    scenario_id: str
    experiment: str
    rows: list[dict] = field(default_factory=list)
    report: dict = field(default_factory=dict)
    plotdata: dict = field(default_factory=dict)  # name -> (header, rows)
    checks: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def add_estimate(self, est: GradientEstimate, dt: float, label: str = "", quantity: str = "gradient"):
        self.rows.append(_row(self.scenario_id, est.method, quantity, est.value, est.std_error, est.n_paths, dt, label))
        for name in sorted(est.diagnostics):
            val = est.diagnostics[name]
            if isinstance(val, (bool, np.bool_)):
                val = float(val)
            if isinstance(val, (int, float, np.floating)):
                self.rows.append(_row(self.scenario_id, est.method, name, float(val), math.nan, est.n_paths, dt, label))

    def add_check(self, name: str, passed: bool, **detail):
        self.checks.append({"name": name, "passed": bool(passed), **{k: _plain(v) for k, v in detail.items()}})


def _row(sid, method, quantity, value, se, n, dt, label=""):
    return {"scenario_id": sid, "method": method, "quantity": quantity, "value": float(value), "std_error": float(se), "n_paths": int(n), "delta_t": float(dt), "label": label}


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def _agreement(res: ExperimentResult, a: GradientEstimate, b: GradientEstimate, n_se: float, allowance: float):
    diff = a.value - b.value
    se = combined_se(a, b)
    res.add_check(
        f"agree:{a.method}~{b.method}",
        abs(diff) <= n_se * se + allowance,
        difference=diff,
        combined_se=se,
        n_se=n_se,
        allowance=allowance,
    )


def gradient_estimate(sc: Scenario, grid=None, mc=None, eta=None, seed_offset: int = 0) -> GradientEstimate:
    grid = grid or sc.grid
    mc = (mc or sc.mc)
    if seed_offset:
        mc = mc.with_(seed=mc.seed + seed_offset)
    xi = sc.segment("xi", grid)
    eta = eta if eta is not None else sc.segment("eta", grid)
    u = sc.control_for(grid)
    return bismut.estimate_gradient(sc.model, grid, xi, eta, sc.functional, u, mc)


# experiment kinds --------------------------------------------------------------


def run_gradient(sc: Scenario, res: ExperimentResult):
    est = gradient_estimate(sc)
    res.add_estimate(est, sc.grid.dt)
    pf = bismut.estimate_semigroup(sc.model, sc.grid, sc.segment("xi"), sc.functional, sc.mc)
    res.add_estimate(pf, sc.grid.dt, quantity="P_T f")
    d = est.diagnostics
    res.add_check("finite", math.isfinite(est.value) and math.isfinite(est.std_error))
    res.add_check("weight-mean-zero", abs(d["weight_mean"]) <= sc.n_se * d["weight_std_error"], weight_mean=d["weight_mean"], std_error=d["weight_std_error"])
    res.report["estimates"] = [est.to_dict(), pf.to_dict()]


def _fd_allowance(eps):
    return 2.0 * eps * eps


def run_oracle_compare(sc: Scenario, res: ExperimentResult):
    g = sc.grid
    xi, eta = sc.segment("xi"), sc.segment("eta")
    est = gradient_estimate(sc)
    res.add_estimate(est, g.dt)
    ests = [est]
    allowances = {}
    for kind in sc.oracle.get("kind", []):
        if kind == "analytic":
            val = oracles.analytic_linear_gradient(sc.model, eta, sc.functional, g)
            o = GradientEstimate(val, 0.0, 0, "analytic")
            # continuous-time value: the scheme is first order in dt
            allowances["analytic"] = float(np.max(eta.sup_norm)) * g.dt
        elif kind == "pathwise":
            o = oracles.pathwise_gradient(sc.model, g, xi, eta, sc.functional, sc.mc)
        else:
            eps = sc.oracle.get("epsilon") or oracles.default_epsilon(xi, eta)
            o = oracles.fd_gradient(sc.model, g, xi, eta, sc.functional, sc.mc, eps=eps)
            allowances["fd"] = _fd_allowance(eps)
        res.add_estimate(o, g.dt)
        ests.append(o)
    for a, b in itertools.combinations(ests, 2):
        allow = allowances.get(a.method, 0.0) + allowances.get(b.method, 0.0)
        _agreement(res, a, b, sc.n_se, allow)
    res.report["estimates"] = [e.to_dict() for e in ests]


def _h_builder(sc: Scenario, grid, eta):
    u = sc.control_for(grid)
    if sc.model.noise_kind == "additive":
        return oracles.additive_h(sc.model, grid, eta, u)
    return oracles.multiplicative_h(sc.model, eta, u)


def run_ibp(sc: Scenario, res: ExperimentResult):
    g = sc.grid
    xi, eta = sc.segment("xi"), sc.segment("eta")
    eps = float(sc.ibp.get("epsilon", 1e-3))
    r = oracles.ibp_residual(sc.model, g, xi, _h_builder(sc, g, eta), sc.functional, sc.mc, eps=eps)
    res.add_estimate(r, g.dt, quantity="ibp_residual")
    c = float(sc.check.get("c_sqrt_dt", 1.0)) * float(np.max(eta.sup_norm))
    allow = eps * eps + (c * math.sqrt(g.dt) if sc.model.noise_kind == "multiplicative" else 0.0)
    res.add_check("ibp-residual", abs(r.value) <= sc.n_se * r.std_error + allow, residual=r.value, std_error=r.std_error, allowance=allow)
    res.report["ibp"] = r.to_dict()


def _sweep_table(report: inequalities.ImpliedConstantReport):
    pts = report.to_dict()["points"]
    keys = sorted({k for p in pts for k in p})
    return keys, [[p.get(k, "") for k in keys] for p in pts]


def run_sweep(sc: Scenario, res: ExperimentResult):
    sw = sc.sweep
    chk = sw["check"]
    xi, eta = sc.segment("xi"), sc.segment("eta")
    f, spec, g, mc = sc.functional, sc.model, sc.grid, sc.mc
    c_max = sw.get("c_max")
    factor = float(sc.check.get("factor", 3.0))
    if chk == "gradient-additive":
        Ts = [spec.tau + float(x) for x in sw.get("T_minus_tau", [g.T - spec.tau])]
        rep = inequalities.check_gradient_bound_additive(spec, xi, eta, f, Ts, g.m, mc, c_max, sc.id)
    elif chk == "gradient-multiplicative":
        Ts = [spec.tau + float(x) for x in sw.get("T_minus_tau", [g.T - spec.tau])]
        ps = [float(p) for p in sw.get("p", [2.0])]
        rep = inequalities.check_gradient_bound_multiplicative(spec, xi, eta, f, ps, Ts, g.m, mc, c_max, sc.id)
        by_T = {}
        for prm, c, s in zip(rep.params, rep.constants, rep.std_errors):
            by_T.setdefault(prm["T"], {})[prm["p"]] = (c, s)
        for T, vals in by_T.items():
            if len(vals) > 1:
                lo_p, hi_p = min(vals), max(vals)
                (c_lo, s_lo), (c_hi, _) = vals[lo_p], vals[hi_p]
                res.add_check(f"moment-ordering:T={T!r}", c_hi <= c_lo + 3 * s_lo, c_low_p=c_lo, c_high_p=c_hi)
        if sw.get("strong_feller_eps"):
            ind = TestFunctional("indicator", f.v, f.v_mid, f.offset)
            sf = inequalities.strong_feller_smoke(spec, g, xi, eta, ind, sw["strong_feller_eps"], mc)
            res.report["strong_feller"] = sf
            res.add_check("strong-feller-smoke", sf["vanishing"], **{k: v for k, v in sf.items() if k != "vanishing"})
    elif chk == "harnack":
        rep = inequalities.check_harnack(spec, g, xi, eta, f, sw.get("alpha", [2.0]), sw.get("eta_scale", [1.0]), mc, c_max, sc.id)
    else:
        scales = [float(s) for s in sw.get("eta_scale", [1.0])]
        deltas = [float(d) for d in sw.get("delta", [1.0])]
        subs = [inequalities.check_entropy_bound(spec, g, xi, eta * s, f, deltas, mc, c_max, sc.id) for s in scales]
        res.report["entropy_points"] = [r.to_dict() for r in subs]
        for s, r in zip(scales, subs):
            res.add_check(f"entropy-margins:scale={s!r}", r.passed, c_min=r.extra["c_min"])
        rep = inequalities.ImpliedConstantReport(
            sc.id,
            "entropy-c-min",
            [{"eta_scale": s} for s in scales],
            np.array([r.extra["c_min"] for r in subs]),
            np.array([float(np.max(r.std_errors)) for r in subs]),
            c_max,
            [False] * len(subs),
            [0.0] * len(subs),
        )
    res.report["implied_constants"] = rep.to_dict()
    for prm, c, s in zip(rep.params, rep.constants, rep.std_errors):
        label = ";".join(f"{k}={prm[k]!r}" for k in sorted(prm) if k not in ("log_ratio", "raw_constant"))
        res.rows.append(_row(sc.id, chk, "implied_constant", c, s, mc.n_paths, g.dt, label))
    res.plotdata["sweep"] = _sweep_table(rep)
    res.add_check("constants-finite", rep.finite)
    res.add_check("one-sided", not any(rep.violations), violations=sum(rep.violations))
    res.add_check(f"spread<={factor!r}", rep.within_factor(factor), sup=rep.sup, median=rep.median, spread=rep.spread)


def run_convergence(sc: Scenario, res: ExperimentResult):
    levels = [int(m) for m in sc.convergence.get("levels", [sc.grid.m, 2 * sc.grid.m])]
    c = float(sc.convergence.get("c_sqrt_dt", sc.check.get("c_sqrt_dt", 1.0)))
    eta_scale = float(np.max(sc.segment("eta").sup_norm))
    ests, grids = [], []
    for i, m in enumerate(levels):
        grid = sc.grid_with(m=m)
        est = gradient_estimate(sc, grid=grid, seed_offset=1_000 * i)
        res.add_estimate(est, grid.dt, label=f"m={m}")
        ests.append(est)
        grids.append(grid)
    for (a, ga), (b, gb) in zip(zip(ests, grids), zip(ests[1:], grids[1:])):
        allow = c * eta_scale * math.sqrt(max(ga.dt, gb.dt))
        diff = a.value - b.value
        se = combined_se(a, b)
        res.add_check(f"grid-convergence:{ga.dt!r}->{gb.dt!r}", abs(diff) <= sc.n_se * se + allow, difference=diff, combined_se=se, allowance=allow)
    res.plotdata["convergence"] = (["delta_t", "value", "std_error", "n_paths"], [[g.dt, e.value, e.std_error, e.n_paths] for g, e in zip(grids, ests)])
    res.report["estimates"] = [dict(e.to_dict(), delta_t=g.dt) for g, e in zip(grids, ests)]


RUNNERS = {
    "gradient": run_gradient,
    "oracle-compare": run_oracle_compare,
    "ibp": run_ibp,
    "inequality-sweep": run_sweep,
    "convergence": run_convergence,
}


def run_experiment(sc: Scenario) -> ExperimentResult:
    res = ExperimentResult(sc.id, sc.experiment)
    RUNNERS[sc.experiment](sc, res)
    res.report.update(
        scenario_id=sc.id,
        experiment=sc.experiment,
        delta_t=sc.grid.dt,
        mc={"n_paths": sc.mc.n_paths, "seed": sc.mc.seed, "antithetic": sc.mc.antithetic},
        checks=res.checks,
        passed=res.passed,
    )
    return res
