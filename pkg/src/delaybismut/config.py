"""Scenario files: strict YAML schema, validation and object builders.

Units: times (``tau``, ``T``, ``theta``) are in the model's time unit,
eigenvalues ``lam`` in 1/time, ``S``/``s0``/``s1`` in state per sqrt(time).
Every key not listed in :data:`SCHEMA` is rejected with its line number.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .mc import MCConfig
from .model import DiffusionSpec, DriftSpec, ModelSpec, TestFunctional, validate_assumptions
from .pathsim import GridSpec, SegmentPath, make_grid
from .sensitivity import ControlFunction, control_function, table_from_knots

EXPERIMENTS = ("gradient", "oracle-compare", "ibp", "inequality-sweep", "convergence")
SEGMENT_KINDS = ("constant", "sampled-smooth", "table")
ORACLES = ("analytic", "pathwise", "fd")
SWEEP_CHECKS = ("gradient-additive", "entropy", "harnack", "gradient-multiplicative")

_ANY = object()
SEGMENT = {"kind": _ANY, "value": _ANY, "seed": _ANY, "modes": _ANY, "amplitude": _ANY, "theta": _ANY, "values": _ANY}
SCHEMA = {
    "id": _ANY,
    "description": _ANY,
    "experiment": _ANY,
    "model": {
        "dim": _ANY,
        "lam": _ANY,
        "tau": _ANY,
        "noise": _ANY,
        "a4_alpha": _ANY,
        "drift": {"kind": _ANY, "B0": _ANY, "B1": _ANY, "G0": _ANY, "G1": _ANY, "delay_weights": _ANY},
        "diffusion": {"kind": _ANY, "S": _ANY, "s0": _ANY, "s1": _ANY},
    },
    "grid": {"T": _ANY, "m": _ANY},
    "control": {"kind": _ANY, "p": _ANY, "knots": {"t": _ANY, "u": _ANY}},
    "functional": {"kind": _ANY, "v": _ANY, "v_mid": _ANY, "offset": _ANY, "scale": _ANY, "lo": _ANY, "hi": _ANY},
    "xi": SEGMENT,
    "eta": SEGMENT,
    "mc": {"n_paths": _ANY, "seed": _ANY, "antithetic": _ANY, "threads": _ANY, "batch_size": _ANY},
    "oracle": {"kind": _ANY, "epsilon": _ANY},
    "ibp": {"epsilon": _ANY},
    "sweep": {
        "check": _ANY,
        "T_minus_tau": _ANY,
        "delta": _ANY,
        "alpha": _ANY,
        "eta_scale": _ANY,
        "p": _ANY,
        "c_max": _ANY,
        "strong_feller_eps": _ANY,
    },
    "convergence": {"levels": _ANY, "c_sqrt_dt": _ANY},
    "check": {"n_se": _ANY, "c_sqrt_dt": _ANY, "factor": _ANY},
}
REQUIRED = ("id", "experiment", "model", "grid", "functional", "xi", "eta", "mc")


class ConfigError(ValueError):
    """Invalid scenario file; the message names the key and, when known, the line."""


# parsing ---------------------------------------------------------------------


def _walk(node, schema, path, lines, errors):
    if not isinstance(node, yaml.MappingNode):
        errors.append(f"line {node.start_mark.line + 1}: '{path or '<root>'}' must be a mapping")
        return
    for key_node, val_node in node.value:
        key = key_node.value
        full = f"{path}.{key}" if path else key
        lines[full] = key_node.start_mark.line + 1
        if key not in schema:
            errors.append(f"line {key_node.start_mark.line + 1}: unknown key '{full}'")
            continue
        sub = schema[key]
        if sub is not _ANY:
            _walk(val_node, sub, full, lines, errors)


def parse_text(text: str, source: str = "<string>") -> tuple[dict, dict]:
    """YAML text to ``(data, key -> line)``; unknown keys raise :class:`ConfigError`."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: malformed YAML: {exc}") from exc
    if root is None:
        raise ConfigError(f"{source}: empty config")
    lines, errors = {}, []
    _walk(root, SCHEMA, "", lines, errors)
    if errors:
        raise ConfigError(f"{source}: " + "; ".join(errors))
    missing = [k for k in REQUIRED if k not in data]
    if missing:
        raise ConfigError(f"{source}: missing required key(s): {', '.join(missing)}")
    return data, lines


# scenario ------------------------------------------------------------------------


@dataclass
class Scenario:
    id: str
    experiment: str
    model: ModelSpec
    grid: GridSpec
    functional: TestFunctional
    mc: MCConfig
    control: dict
    xi: dict
    eta: dict
    oracle: dict = field(default_factory=dict)
    ibp: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    convergence: dict = field(default_factory=dict)
    check: dict = field(default_factory=dict)
    description: str = ""
    raw: dict = field(default_factory=dict, repr=False)

    def segment(self, which: str, grid: GridSpec | None = None) -> SegmentPath:
        return build_segment(self.xi if which == "xi" else self.eta, grid or self.grid, self.model.dim)

    def control_for(self, grid: GridSpec | None = None) -> ControlFunction:
        return build_control(self.control, grid or self.grid)

    def grid_with(self, T=None, m=None) -> GridSpec:
        return make_grid(self.model.tau, self.grid.T if T is None else T, self.grid.m if m is None else m)

    @property
    def n_se(self) -> float:
        return float(self.check.get("n_se", 3.0))


def _err(lines, key, msg):
    line = lines.get(key)
    where = f"line {line}: " if line else ""
    return ConfigError(f"{where}{key}: {msg}")


def _floats(value, d, lines, key):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr)
    if arr.shape[0] != d:
        raise _err(lines, key, f"expected {d} entries, got {arr.shape[0]}")
    return arr


def build_model(cfg: dict, lines: dict) -> ModelSpec:
    d = cfg.get("dim")
    if not isinstance(d, int) or d < 1:
        raise _err(lines, "model.dim", "must be a positive integer")
    lam = np.asarray(cfg.get("lam"), dtype=float).ravel()
    if lam.size == 1 and d > 1:
        lam = np.full(d, lam[0])
    if lam.size != d:
        raise _err(lines, "model.lam", f"expected {d} eigenvalues")
    dr = cfg.get("drift") or {}
    kind = dr.get("kind", "linear_delay")
    if kind == "linear_delay":
        for k in ("G0", "G1", "delay_weights"):
            if k in dr:
                raise _err(lines, f"model.drift.{k}", "only valid for bounded_nonlinear drift")
        drift = DriftSpec.linear_delay(d, dr.get("B0", 0.0), dr.get("B1", 0.0))
    elif kind == "bounded_nonlinear":
        drift = DriftSpec.bounded_nonlinear(d, dr.get("G0", 0.0), dr.get("G1", 0.0), dr.get("delay_weights", ()), dr.get("B0", 0.0), dr.get("B1", 0.0))
    else:
        raise _err(lines, "model.drift.kind", f"unknown drift kind {kind!r}")
    df = cfg.get("diffusion") or {}
    dkind = df.get("kind", "constant")
    if dkind == "constant":
        diffusion = DiffusionSpec.constant(d, df.get("S", 1.0))
    elif dkind == "diagonal_saturating":
        diffusion = DiffusionSpec.diagonal_saturating(d, df.get("s0"), df.get("s1"))
    else:
        raise _err(lines, "model.diffusion.kind", f"unknown diffusion kind {dkind!r}")
    return ModelSpec(lam, float(cfg.get("tau")), drift, diffusion, float(cfg.get("a4_alpha", 0.25)), cfg.get("noise", "additive"))


def build_segment(cfg: dict, grid: GridSpec, d: int) -> SegmentPath:
    """Segment on the grid nodes of [-tau, 0].

    ``constant``: ``value`` (scalar or d-vector).
    ``sampled-smooth``: value + amplitude * sum_j c_j sin(j pi theta / tau) / j,
    c_j ~ N(0, I_d) from ``seed``, j = 1..modes.
    ``table``: piecewise-linear interpolation of ``values`` at ``theta``.
    """
    kind = cfg.get("kind", "constant")
    base = np.broadcast_to(np.asarray(cfg.get("value", 0.0), dtype=float), (d,)).copy()
    thetas = np.arange(-grid.m, 1) * grid.dt
    if kind == "constant":
        vals = np.tile(base, (grid.m + 1, 1))
    elif kind == "sampled-smooth":
        modes = int(cfg.get("modes", 3))
        rng = np.random.default_rng(int(cfg.get("seed", 0)))
        coef = rng.standard_normal((modes, d))
        j = np.arange(1, modes + 1)
        basis = np.sin(np.outer(thetas, j) * np.pi / grid.tau) / j
        vals = base + float(cfg.get("amplitude", 1.0)) * basis @ coef
    elif kind == "table":
        th = np.asarray(cfg["theta"], dtype=float)
        tab = np.asarray(cfg["values"], dtype=float).reshape(len(th), -1)
        tab = np.broadcast_to(tab, (len(th), d))
        vals = np.stack([np.interp(thetas, th, tab[:, i]) for i in range(d)], axis=1)
    else:
        raise ConfigError(f"unknown segment kind {kind!r}")
    return SegmentPath(vals, grid.dt)


def build_control(cfg: dict, grid: GridSpec) -> ControlFunction:
    kind = cfg.get("kind", "additive_normalized")
    p = cfg.get("p")
    if kind == "table":
        kn = cfg.get("knots") or {}
        u_fn, udot_fn = table_from_knots(kn["t"], kn["u"])
        return control_function("table", grid, p=p, u_fn=u_fn, udot_fn=udot_fn)
    return control_function(kind, grid, p=p)


def build_functional(cfg: dict, d: int, lines: dict) -> TestFunctional:
    v = np.broadcast_to(np.asarray(cfg.get("v", 1.0), dtype=float), (d,)).copy()
    vm = cfg.get("v_mid")
    vm = None if vm is None else np.broadcast_to(np.asarray(vm, dtype=float), (d,)).copy()
    return TestFunctional(
        cfg.get("kind", "linear_endpoint"),
        v,
        vm,
        float(cfg.get("offset", 0.0)),
        float(cfg.get("scale", 1.0)),
        float(cfg.get("lo", 0.5)),
        float(cfg.get("hi", 1.5)),
    )


def build_scenario(data: dict, lines: dict | None = None) -> Scenario:
    """Validated :class:`Scenario` from parsed data; raises :class:`ConfigError`."""
    lines = lines or {}
    data = copy.deepcopy(data)
    exp = data["experiment"]
    if exp not in EXPERIMENTS:
        raise _err(lines, "experiment", f"must be one of {EXPERIMENTS}")
    try:
        model = build_model(data["model"], lines)
        g = data["grid"]
        grid = make_grid(model.tau, float(g["T"]), int(g["m"]))
        functional = build_functional(data["functional"], model.dim, lines)
        mcd = data["mc"]
        mc = MCConfig(
            int(mcd["n_paths"]),
            int(mcd.get("seed", 0)),
            bool(mcd.get("antithetic", False)),
            int(mcd.get("threads", 1)),
            mcd.get("batch_size"),
        )
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc
    control = data.get("control") or {"kind": "additive_normalized" if model.noise_kind == "additive" else "multiplicative_linear", "p": 2.0}
    sc = Scenario(
        id=str(data["id"]),
        experiment=exp,
        model=model,
        grid=grid,
        functional=functional,
        mc=mc,
        control=control,
        xi=data["xi"],
        eta=data["eta"],
        oracle=data.get("oracle") or {},
        ibp=data.get("ibp") or {},
        sweep=data.get("sweep") or {},
        convergence=data.get("convergence") or {},
        check=data.get("check") or {},
        description=str(data.get("description", "")),
        raw=data,
    )
    _consistency(sc, lines)
    return sc


def _consistency(sc: Scenario, lines):
    noise = sc.model.noise_kind
    ck = sc.control.get("kind")
    if ck == "additive_normalized" and noise != "additive":
        raise _err(lines, "control.kind", "additive_normalized control needs additive noise")
    if ck == "multiplicative_linear" and noise != "multiplicative":
        raise _err(lines, "control.kind", "multiplicative_linear control needs multiplicative noise")
    for which in ("xi", "eta"):
        kind = getattr(sc, which).get("kind", "constant")
        if kind not in SEGMENT_KINDS:
            raise _err(lines, f"{which}.kind", f"must be one of {SEGMENT_KINDS}")
    try:
        sc.segment("xi")
        sc.segment("eta")
        sc.control_for()
        if sc.functional.v_mid is not None and sc.grid.m % 2:
            raise ValueError("v_mid needs an even m")
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc
    kinds = sc.oracle.get("kind", [])
    kinds = [kinds] if isinstance(kinds, str) else list(kinds)
    for k in kinds:
        if k not in ORACLES:
            raise _err(lines, "oracle.kind", f"unknown oracle {k!r}; choose from {ORACLES}")
    if "analytic" in kinds and (sc.model.drift.kind != "linear_delay" or noise != "additive" or sc.functional.kind != "linear_endpoint"):
        raise _err(lines, "oracle.kind", "analytic oracle needs a linear additive model and a linear_endpoint functional")
    sc.oracle["kind"] = kinds
    if sc.experiment == "inequality-sweep":
        chk = sc.sweep.get("check")
        if chk not in SWEEP_CHECKS:
            raise _err(lines, "sweep.check", f"must be one of {SWEEP_CHECKS}")
        if (chk == "gradient-multiplicative") != (noise == "multiplicative"):
            raise _err(lines, "sweep.check", f"{chk} does not match {noise} noise")
        if chk in ("entropy", "harnack") and not sc.functional.bounds[0] > 0:
            raise _err(lines, "functional.kind", f"{chk} needs a positive functional")


def load_scenario(path, overrides: dict | None = None) -> Scenario:
    """Parse, override (``seed``, ``threads``, ``n_paths``) and validate a scenario file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    data, lines = parse_text(text, str(path))
    for key, val in (overrides or {}).items():
        if val is not None:
            data.setdefault("mc", {})[key] = val
    return build_scenario(data, lines)


def assumption_report(sc: Scenario):
    return validate_assumptions(sc.model)


# golden scenarios -----------------------------------------------------------------

GOLDEN = (
    "add-linear-scalar",
    "add-nonlinear-d4",
    "mult-diagonal-d1",
    "mult-diagonal-d4",
    "harnack-sweep",
    "entropy-sweep",
    "convergence-grid",
)


def golden_path(name: str) -> Path:
    if name not in GOLDEN:
        raise ConfigError(f"unknown golden scenario {name!r}")
    return Path(str(resources.files("delaybismut") / "scenarios" / f"{name}.yaml"))


def list_golden() -> list[dict]:
    out = []
    for name in GOLDEN:
        data, _ = parse_text(golden_path(name).read_text(), name)
        out.append({"id": name, "experiment": data["experiment"], "description": data.get("description", ""), "path": str(golden_path(name))})
    return out


def resolve(path_or_name: str) -> Path:
    """A golden scenario name or a file path."""
    if path_or_name in GOLDEN:
        return golden_path(path_or_name)
    return Path(path_or_name)
