"""Scenario files (TOML) and their conversion into model objects.

A scenario has up to six tables, all optional::

    [params]      lam, phi, B, L_max, profile, total_charge_time and any
                  SystemParams field (v_s, beta, kappa, ...)
    [design]      K, Q, H, R, pi (list or "fixed"), scheme,
                  total_n_br or total_n_bs
    [bounds]      OptimizerBounds fields
    [optimizer]   OptimizerOptions fields (seed comes from the command line)
    [simulation]  horizon_h, warmup_h, cooldown_h, cell_size
    [verify]      K_values, totals, seeds
    [sweep]       parameter, values, schemes, benchmarks

Unknown keys and bad values raise :class:`ScenarioError` carrying the line
of the offending entry.
"""
from __future__ import annotations

import copy
import math
import re
import sys
from dataclasses import dataclass, field, fields

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .optimize import OptimizerOptions
from .params import (
    DesignVariables,
    OptimizerBounds,
    Scheme,
    SystemParams,
    fixed_design_promotions,
    make_priority_weights,
    table1_params,
)

SWEEP_PARAMETERS = {"lambda": "lam", "beta": "beta", "gamma": "gamma", "omega1": "omega1", "kappa": "kappa", "B": "B"}

_PARAM_EXTRA = {"profile", "total_charge_time"}
_DESIGN_KEYS = {"K", "Q", "H", "R", "pi", "scheme", "total_n_br", "total_n_bs"}
_SIM_KEYS = {"horizon_h", "warmup_h", "cooldown_h", "cell_size"}
_VERIFY_KEYS = {"K_values", "totals", "seeds"}
_SWEEP_KEYS = {"parameter", "values", "schemes", "benchmarks"}
_OPT_KEYS = {f.name for f in fields(OptimizerOptions)} - {"seed"}
_BOUND_KEYS = {f.name for f in fields(OptimizerBounds)}
_PARAM_KEYS = {f.name for f in fields(SystemParams)} | _PARAM_EXTRA

_TABLES = {
    "params": _PARAM_KEYS, "design": _DESIGN_KEYS, "bounds": _BOUND_KEYS, "optimizer": _OPT_KEYS,
    "simulation": _SIM_KEYS, "verify": _VERIFY_KEYS, "sweep": _SWEEP_KEYS,
}


class ScenarioError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<scenario>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


def _find_line(text: str, table: str | None, key: str | None) -> int | None:
    """Line (1-based) of ``key`` inside ``[table]``, or of the table header."""
    current = None
    header_line = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[\s*([A-Za-z0-9_.-]+)\s*\]", line)
        if m:
            current = m.group(1)
            if current == table:
                header_line = i
            continue
        if current == table and key is not None and re.match(rf"^{re.escape(key)}\s*=", line):
            return i
    return header_line


@dataclass
class Scenario:
    data: dict = field(default_factory=dict)
    text: str = ""
    source: str = "<scenario>"

    def section(self, name: str) -> dict:
        return dict(self.data.get(name, {}))

    def error(self, message: str, table: str | None = None, key: str | None = None) -> ScenarioError:
        return ScenarioError(message, _find_line(self.text, table, key) if self.text else None, self.source)

    def with_param(self, name: str, value) -> "Scenario":
        """Copy with one entry of ``[params]`` changed (sweep axes use their
        public names, e.g. ``lambda``)."""
        out = Scenario(copy.deepcopy(self.data), self.text, self.source)
        pars = out.data.setdefault("params", {})
        key = SWEEP_PARAMETERS.get(name, name)
        pars[key] = value
        if key == "B":
            # a bigger battery takes proportionally longer to charge
            pars["total_charge_time"] = float(value)
            pars.pop("tau", None)
        return out


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ScenarioError(f"parse error: {exc}", int(m.group(1)) if m else None, source) from None
    sc = Scenario(data, text, source)
    for name, value in data.items():
        if name not in _TABLES:
            raise sc.error(f"unknown table [{name}]", name)
        if not isinstance(value, dict):
            raise ScenarioError(f"'{name}' must be a table", _find_line(text, None, name), source)
        for key in value:
            if key not in _TABLES[name]:
                raise sc.error(f"unknown key '{key}' in [{name}]", name, key)
    # build everything once so semantic errors surface at load time
    build_params(sc)
    bounds = build_bounds(sc)
    if "design" in data:
        build_design(sc)
    build_optimizer_options(sc, seed=0)
    if "sweep" in data:
        sweep_spec(sc, bounds)
    return sc


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_scenario(text, str(path))


def scenario_from_dict(data: dict) -> Scenario:
    """Rebuild a scenario from its stored table dict (run manifests)."""
    sc = Scenario(copy.deepcopy(data))
    build_params(sc)
    return sc


def build_params(sc: Scenario) -> SystemParams:
    pars = sc.section("params")
    kw = {}
    for key in ("lam", "phi", "B", "L_max", "profile", "total_charge_time"):
        if key in pars:
            kw[key] = pars.pop(key)
    if "tau" in pars:
        pars["tau"] = tuple(pars["tau"])
    try:
        return table1_params(**kw, **pars)
    except (TypeError, ValueError) as exc:
        key = next(iter(kw.keys() | pars.keys()), None)
        for k in list(kw) + list(pars):
            if k in str(exc):
                key = k
                break
        raise sc.error(str(exc), "params", key) from None


def build_bounds(sc: Scenario) -> OptimizerBounds:
    try:
        return OptimizerBounds(**sc.section("bounds"))
    except (TypeError, ValueError) as exc:
        raise sc.error(str(exc), "bounds") from None


def build_optimizer_options(sc: Scenario, seed: int) -> OptimizerOptions:
    opt = sc.section("optimizer")
    try:
        out = OptimizerOptions(seed=seed, **opt)
    except TypeError as exc:
        raise sc.error(str(exc), "optimizer") from None
    if out.mode not in ("bilevel", "simultaneous"):
        raise sc.error(f"unknown optimizer mode {out.mode!r}", "optimizer", "mode")
    if out.n_starts < 1:
        raise sc.error("n_starts must be at least 1", "optimizer", "n_starts")
    return out


def scheme_of(sc: Scenario, override: str | None = None) -> Scheme:
    name = override or sc.section("design").get("scheme", "PW1")
    try:
        return Scheme(str(name).upper().replace("-", ""))
    except ValueError:
        raise sc.error(f"unknown priority scheme {name!r}", "design", "scheme") from None


@dataclass
class DesignSpec:
    design: DesignVariables
    total_n_br: float | None
    total_n_bs: float | None


def build_design(sc: Scenario, params: SystemParams | None = None, scheme: str | None = None) -> DesignSpec:
    params = params or build_params(sc)
    d = sc.section("design")
    B = params.B
    K = d.get("K", 10)
    if not isinstance(K, int) or K < 0:
        raise sc.error("K must be a nonnegative integer", "design", "K")
    Q = float(d.get("Q", 20 if K > 0 else 0))
    H = float(d.get("H", 1.0))
    R = float(d.get("R", 20.0))
    pi_raw = d.get("pi", "fixed")
    if K == 0:
        pi = np.zeros(B)
    elif pi_raw == "fixed":
        pi = fixed_design_promotions(params, K)
    else:
        try:
            pi = np.asarray(pi_raw, dtype=float)
        except (TypeError, ValueError):
            raise sc.error("pi must be a list of numbers or \"fixed\"", "design", "pi") from None
        if pi.shape != (B,):
            raise sc.error(f"pi needs {B} entries, got {pi.size}", "design", "pi")
    total_n_br = d.get("total_n_br")
    total_n_bs = d.get("total_n_bs")
    if total_n_br is not None and total_n_bs is not None:
        raise sc.error("give total_n_br or total_n_bs, not both", "design", "total_n_bs")
    if total_n_br is None and total_n_bs is None:
        total_n_br = 1000.0
    for key, v in (("total_n_br", total_n_br), ("total_n_bs", total_n_bs)):
        if v is not None and not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise sc.error(f"{key} must be a positive number", "design", key)
    weights = make_priority_weights(scheme_of(sc, scheme), B, params.L_max)
    try:
        design = DesignVariables(np.zeros(B + 1), np.zeros(B + 1), K, Q if K > 0 else 0.0, pi, H, R, weights)
    except ValueError as exc:
        raise sc.error(str(exc), "design") from None
    return DesignSpec(design, None if total_n_br is None else float(total_n_br),
                      None if total_n_bs is None else float(total_n_bs))


def sim_options(sc: Scenario) -> dict:
    return {k: float(v) for k, v in sc.section("simulation").items()}


def verify_options(sc: Scenario) -> dict:
    v = sc.section("verify")
    return dict(
        K_values=tuple(int(k) for k in v.get("K_values", (15, 20))),
        totals=tuple(float(t) for t in v.get("totals", (1000, 2000, 5000))),
        seeds=tuple(int(s) for s in v.get("seeds", (0, 1, 2))),
    )


@dataclass
class SweepSpec:
    parameter: str
    values: tuple
    schemes: tuple[Scheme, ...]
    benchmarks: bool = True


def sweep_spec(sc: Scenario, bounds: OptimizerBounds | None = None) -> SweepSpec:
    s = sc.section("sweep")
    name = s.get("parameter", "lambda")
    if name not in SWEEP_PARAMETERS:
        raise sc.error(f"cannot sweep {name!r}; choose from {sorted(SWEEP_PARAMETERS)}", "sweep", "parameter")
    values = s.get("values")
    if not isinstance(values, list) or not values:
        raise sc.error("values must be a nonempty list", "sweep", "values")
    for v in values:
        if not isinstance(v, (int, float)) or not v > 0:
            raise sc.error(f"sweep value {v!r} must be a positive number", "sweep", "values")
        if name == "B" and (int(v) != v or v < build_params(sc).L_max):
            raise sc.error("B values must be integers not below L_max", "sweep", "values")
        try:
            build_params(sc.with_param(name, int(v) if name == "B" else float(v)))
        except ScenarioError as exc:
            raise sc.error(str(exc), "sweep", "values") from None
    schemes = []
    for x in s.get("schemes", ["PW1", "PW2", "PW3"]):
        try:
            schemes.append(Scheme(str(x).upper().replace("-", "")))
        except ValueError:
            raise sc.error(f"unknown priority scheme {x!r}", "sweep", "schemes") from None
    return SweepSpec(name, tuple(int(v) if name == "B" else float(v) for v in values), tuple(schemes),
                     bool(s.get("benchmarks", True)))
