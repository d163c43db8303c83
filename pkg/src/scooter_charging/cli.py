"""Command-line front end: ``scooter-plan solve|optimize|simulate|verify|sweep``.

Every command writes CSV files (6 significant digits) and a
``manifest.json`` into ``--out``. Passing a manifest back as ``--scenario``
re-runs the same command with the same configuration and seed.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .cost import benchmark_walk_only, cost_breakdown
from .optimize import InfeasibleError, OptimizerOptions, benchmark_depot_only, optimize_design
from .params import Scheme, SystemParams
from .scenario import (
    Scenario,
    ScenarioError,
    build_bounds,
    build_design,
    build_optimizer_options,
    build_params,
    load_scenario,
    scenario_from_dict,
    scheme_of,
    sim_options,
    sweep_spec,
    verify_options,
)
from .steady_state import STATUSES, SolverError, SteadyState, solve_steady_state

WORKERS_ENV = "SCOOTER_PLAN_WORKERS"
MANIFEST = "manifest.json"
COMMANDS = ("solve", "optimize", "simulate", "verify", "sweep")


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def write_full_precision(path: Path, items):
    """Sidecar ``name value`` text with every float at full precision."""
    with open(path, "w") as fh:
        for name, value in items:
            fh.write(f"{name} {value!r}\n" if not isinstance(value, str) else f"{name} {value}\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, sc: Scenario, seed, scheme, outputs, failures=()):
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "scheme": scheme,
        "scenario": sc.data,
        "source": sc.source,
        "outputs": {name: _sha256(out / name) for name in sorted(outputs)},
        "failures": list(failures),
    }
    with open(out / MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


# -- helpers -----------------------------------------------------------------

def summary_items(params: SystemParams, st: SteadyState) -> list[tuple[str, float]]:
    """System characteristics of one design, in table-row order."""
    d = st.design
    c = cost_breakdown(params, st)
    K = d.K
    items = [
        ("K", K),
        ("S", params.phi / K if K > 0 else math.nan),
        ("Q", float(d.Q)),
        ("H", float(d.H)),
        ("R", float(d.R)),
    ]
    items += [(f"pi_{b}", float(d.pi[b])) for b in range(params.B)]
    items += [
        ("total_n_br", st.total_n_br),
        ("total_n_bs", st.total_n_bs),
        ("n_br_density", st.total_n_br / params.phi**2),
        ("station_occupancy", st.total_n_bs / (K * K * d.Q) if K > 0 and d.Q > 0 else math.nan),
        ("fleet", st.F),
        ("trucks_per_dispatch", st.m),
        ("truck_distance_per_trip", params.kappa * st.l_e / (params.demand * d.H)),
        ("promotion_per_trip", c.promotion_cost / params.demand),
        ("mean_trip_duration", st.mean_trip_duration),
        ("station_cost", c.station_cost),
        ("charger_cost", c.charger_cost),
        ("fleet_cost", c.fleet_cost),
        ("repositioning_cost", c.repositioning_cost),
        ("promotion_cost", c.promotion_cost),
        ("rider_time_cost", c.rider_time_cost),
        ("agency_cost", c.agency_cost),
        ("Z", c.Z),
        ("residual_norm", st.residual_norm),
    ]
    return items


def _write_steady(out: Path, params: SystemParams, st: SteadyState, prefix: str) -> list[str]:
    names = [f"{prefix}_counts.csv", f"{prefix}_summary.csv", f"{prefix}_summary.txt"]
    write_csv(out / names[0], ["b", *STATUSES], [[b, *st.n[b]] for b in range(params.B + 1)])
    items = summary_items(params, st)
    write_csv(out / names[1], ["name", "value"], items)
    write_full_precision(out / names[2], items)
    return names


def _workers(args) -> int:
    if args.workers is not None:
        return max(1, args.workers)
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise SystemExit(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return 1


def _load(args) -> tuple[Scenario, dict | None]:
    """Scenario from a TOML file, a manifest, or the built-in defaults."""
    if args.scenario is None:
        return Scenario(), None
    path = Path(args.scenario)
    if path.suffix == ".json":
        with open(path) as fh:
            manifest = json.load(fh)
        if manifest.get("command") != args.command:
            raise ScenarioError(f"manifest was written by '{manifest.get('command')}', not '{args.command}'",
                                source=str(path))
        sc = scenario_from_dict(manifest["scenario"])
        sc.source = manifest.get("source", str(path))
        return sc, manifest
    return load_scenario(path), None


def _seed(args, manifest, required: bool) -> int | None:
    if args.seed is not None:
        return args.seed
    if manifest is not None and manifest.get("seed") is not None:
        return manifest["seed"]
    if required:
        raise SystemExit(f"{args.command}: --seed is required")
    return None


def _scheme(args, manifest):
    if args.scheme is not None:
        return args.scheme
    if manifest is not None:
        return manifest.get("scheme")
    return None


# -- commands ----------------------------------------------------------------

def cmd_solve(args) -> int:
    sc, manifest = _load(args)
    scheme = _scheme(args, manifest)
    params = build_params(sc)
    spec = build_design(sc, params, scheme)
    design = spec.design
    try:
        st = solve_steady_state(params, design, total_n_br=spec.total_n_br, total_n_bs=spec.total_n_bs)
    except (SolverError, kernels.CapacityError, kernels.NoSupplyError) as exc:
        print(f"solve: no steady state: {exc}", file=sys.stderr)
        return 2
    out = _outdir(args)
    outputs = _write_steady(out, params, st, "steady")
    write_manifest(out, "solve", sc, None, scheme, outputs)
    kind = "depot-only system" if design.depot_only else f"K={design.K} stations, Q={design.Q:g}"
    c = cost_breakdown(params, st)
    print(f"{kind}: Z={c.Z:.6g} mean trip duration={st.mean_trip_duration:.6g} fleet={st.F:.6g}")
    print(f"conservation residual norm {st.residual_norm:.3g}")
    return 0


def cmd_optimize(args) -> int:
    sc, manifest = _load(args)
    seed = _seed(args, manifest, required=True)
    scheme = _scheme(args, manifest) or scheme_of(sc).value
    params = build_params(sc)
    bounds = build_bounds(sc)
    opts = build_optimizer_options(sc, seed)
    try:
        res = optimize_design(params, bounds, scheme, opts, workers=_workers(args))
    except InfeasibleError as exc:
        print(f"optimize: {exc}", file=sys.stderr)
        return 2
    out = _outdir(args)
    outputs = _write_steady(out, params, res.steady, "design")
    res.write_log(out / "search_log.csv")
    outputs.append("search_log.csv")
    write_manifest(out, "optimize", sc, seed, scheme, outputs)
    print(f"best design: K={res.design.K} Q={res.design.Q:g} Z={res.cost.Z:.6g}")
    return 0


def cmd_simulate(args) -> int:
    from .sim import run_simulation, sim_config_from_steady

    sc, manifest = _load(args)
    seed = _seed(args, manifest, required=True)
    scheme = _scheme(args, manifest)
    params = build_params(sc)
    spec = build_design(sc, params, scheme)
    try:
        st = solve_steady_state(params, spec.design, total_n_br=spec.total_n_br, total_n_bs=spec.total_n_bs)
    except (SolverError, kernels.CapacityError, kernels.NoSupplyError) as exc:
        print(f"simulate: the model has no steady state to initialise from: {exc}", file=sys.stderr)
        return 2
    stats = run_simulation(sim_config_from_steady(params, st, seed, **sim_options(sc)))
    out = _outdir(args)
    rows = stats.as_rows()
    write_csv(out / "sim_stats.csv", ["name", "value"], [(n, float(v)) for n, v in rows])
    with open(out / "sim_stats.txt", "w") as fh:
        fh.writelines(f"{n} {v}\n" for n, v in rows)
    write_manifest(out, "simulate", sc, seed, scheme, ["sim_stats.csv", "sim_stats.txt"])
    print(f"simulated mean trip duration {stats.mean_trip_duration:.6g} (model {st.mean_trip_duration:.6g}), "
          f"lost fraction {stats.lost_fraction:.4g}")
    return 0


def cmd_verify(args) -> int:
    from .sim import verify_model, write_verify_csv

    sc, manifest = _load(args)
    seed = _seed(args, manifest, required=False)
    params = build_params(sc)
    v = verify_options(sc)
    if seed is not None:
        v["seeds"] = tuple(seed + i for i in range(len(v["seeds"])))
    cells = verify_model(params, v["K_values"], v["totals"], v["seeds"], workers=_workers(args), **sim_options(sc))
    out = _outdir(args)
    write_verify_csv(cells, out / "verify.csv")
    write_manifest(out, "verify", sc, seed, None, ["verify.csv"],
                   [f"K={c.K} total={c.total_n_br:g}: model failed" for c in cells if c.status != "ok"])
    for c in cells:
        print(f"K={c.K:3d} total={c.total_n_br:7g} model={c.model_duration:.4g} sim={c.sim_mean:.4g}"
              f"±{c.sim_ci:.2g} err={c.rel_error:.2%} {c.branch}")
    return 0


def _sweep_cell(task):
    """One sweep cell; returns ``(key, items or None, error message)``."""
    data, name, value, system, seed = task
    sc = scenario_from_dict(data).with_param(name, value)
    params = build_params(sc)
    bounds = build_bounds(sc)
    try:
        if system == "walk":
            c = benchmark_walk_only(params)
            return (value, system), [("Z", c.Z), ("agency_cost", 0.0), ("mean_trip_duration", c.mean_trip_duration)], ""
        if system == "depot":
            _, c = benchmark_depot_only(params, bounds, build_optimizer_options(sc, seed))
            return (value, system), [("Z", c.Z), ("agency_cost", c.agency_cost),
                                     ("mean_trip_duration", c.mean_trip_duration)], ""
        res = optimize_design(params, bounds, system, build_optimizer_options(sc, seed))
        return (value, system), summary_items(params, res.steady), ""
    except (InfeasibleError, SolverError, kernels.CapacityError, kernels.NoSupplyError) as exc:
        return (value, system), None, f"{name}={value} {system}: {exc}"


def cmd_sweep(args) -> int:
    sc, manifest = _load(args)
    seed = _seed(args, manifest, required=False) or 0
    if "sweep" not in sc.data:
        raise ScenarioError("sweep needs a [sweep] table", source=sc.source)
    spec = sweep_spec(sc)
    scheme = _scheme(args, manifest)
    systems = [s.value for s in spec.schemes]
    if scheme is not None:
        systems = [Scheme(scheme).value]
    if spec.benchmarks:
        systems += ["depot", "walk"]
    tasks = [(sc.data, spec.parameter, v, s, seed) for v in spec.values for s in systems]
    workers = _workers(args)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, tasks))
    else:
        results = [_sweep_cell(t) for t in tasks]
    failures = [msg for _, items, msg in results if items is None]
    found = {key: dict(items) for key, items, _ in results if items is not None}

    out = _outdir(args)
    design_rows = [(key, items) for key, items, _ in results if items is not None and key[1] not in ("depot", "walk")]
    if design_rows:
        cols = [n for n, _ in design_rows[0][1]]
        write_csv(out / "sweep_designs.csv", [spec.parameter, "scheme", *cols],
                  [[k[0], k[1], *[dict(items).get(c, math.nan) for c in cols]] for k, items in design_rows])
    header = [spec.parameter, "system", "Z", "agency_cost", "mean_trip_duration", "gap_vs_depot_pct", "gap_vs_walk_pct"]
    rows = []
    for v in spec.values:
        z_depot = found.get((v, "depot"), {}).get("Z", math.nan)
        z_walk = found.get((v, "walk"), {}).get("Z", math.nan)
        for s in systems:
            r = found.get((v, s))
            if r is None:
                continue
            Z = r["Z"]
            rows.append([v, s, Z, r["agency_cost"], r["mean_trip_duration"],
                         100 * (z_depot - Z) / z_depot, 100 * (z_walk - Z) / z_walk])
    write_csv(out / "sweep_comparison.csv", header, rows)
    outputs = ["sweep_comparison.csv"] + (["sweep_designs.csv"] if design_rows else [])
    write_manifest(out, "sweep", sc, seed, scheme, outputs, failures)
    for msg in failures:
        print(f"sweep: cell failed: {msg}", file=sys.stderr)
    print(f"sweep over {spec.parameter}: {len(results) - len(failures)} cells done, {len(failures)} failed")
    return 0


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scooter-plan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "steady state and cost of the scenario's design",
        "optimize": "best design for the scenario's parameters",
        "simulate": "agent-based run initialised from the model",
        "verify": "model vs simulation over a grid of K and fleet sizes",
        "sweep": "optimal designs and benchmarks over one parameter",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--scenario", help="scenario TOML file or a manifest.json from an earlier run")
        p.add_argument("--out", default="out", help="output directory (default: %(default)s)")
        p.add_argument("--seed", type=int, help="random seed (required for simulate and optimize)")
        p.add_argument("--workers", type=int, help=f"worker processes (default: ${WORKERS_ENV} or 1)")
        p.add_argument("--scheme", choices=["PW1", "PW2", "PW3"], type=str.upper, help="station priority scheme")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"solve": cmd_solve, "optimize": cmd_optimize, "simulate": cmd_simulate,
               "verify": cmd_verify, "sweep": cmd_sweep}[args.command]
    try:
        return handler(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
