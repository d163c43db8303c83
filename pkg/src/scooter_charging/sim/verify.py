"""Model-versus-simulation comparison on a grid of station counts and
random-location fleet sizes at the fixed verification design."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .. import kernels
from ..params import DesignVariables, Scheme, SystemParams, fixed_design_promotions, make_priority_weights
from ..steady_state import SolverError, SteadyState, find_equilibria, solve_steady_state
from .engine import SimConfig, SimStats, run_simulation

VERIFY_H = 1.0
VERIFY_R = 20
VERIFY_Q = 20


def verification_design(params: SystemParams, K: int) -> DesignVariables:
    """Fixed design of the verification runs: hourly trucks of 20, 20 chargers
    per station, uniform priority, promotions accepted with probability 0.5
    (SoC 0) and 0.25 (SoC 1)."""
    B = params.B
    pi = fixed_design_promotions(params, K) if K > 0 else np.zeros(B)
    return DesignVariables(np.zeros(B + 1), np.zeros(B + 1), K, VERIFY_Q if K > 0 else 0, pi,
                           VERIFY_H, VERIFY_R, make_priority_weights(Scheme.PW1, B, params.L_max))


def sim_config_from_steady(params: SystemParams, steady: SteadyState, seed: int, **kw) -> SimConfig:
    """Simulation seeded with the model's fleet size and station occupancy."""
    d = steady.design
    return SimConfig(
        params=params, K=d.K, Q=int(round(d.Q)), H=d.H, R=int(round(d.R)), pi=np.asarray(d.pi),
        weights=d.weights, n_station_init=int(round(steady.total_n_bs)), fleet=int(round(steady.F)),
        seed=seed, **kw,
    )


@dataclass
class VerifyCell:
    K: int
    total_n_br: float
    fleet: int
    n_station_init: int
    model_duration: float
    branch: str  # GOOD, BAD, SINGLE or "" when not classified
    n_branches: int
    sim_mean: float
    sim_ci: float  # half-width of the 95% interval across seeds
    rel_error: float
    lost_fraction: float
    status: str  # "ok" or "model_failed"


def _classify(params, design, steady, fleet):
    try:
        branches = find_equilibria(params, design, fleet)
    except (SolverError, kernels.CapacityError, kernels.NoSupplyError):
        return "", 0
    if len(branches) <= 1:
        return "SINGLE", len(branches)
    dur = steady.mean_trip_duration
    best = min(branches, key=lambda br: abs(br.mean_trip_duration - dur))
    return best.tag, len(branches)


def run_replications(configs, workers: int = 1) -> list[SimStats]:
    """Independent runs, in input order; parallel when ``workers > 1``."""
    if workers <= 1 or len(configs) <= 1:
        return [run_simulation(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_simulation, configs))


def verify_model(params: SystemParams, K_values=(5, 10, 15, 20), totals=(10, 100, 1000, 2000, 5000),
                 seeds=(0, 1, 2), classify: bool = True, workers: int = 1, **sim_kw) -> list[VerifyCell]:
    """Per cell: model trip duration at the given random-location total, the
    simulated mean over ``seeds`` with a t-interval, and the relative error.
    Cells where the model does not converge are flagged, not raised."""
    cells = []
    for K in K_values:
        design = verification_design(params, K)
        for T in totals:
            try:
                st = solve_steady_state(params, design, total_n_br=float(T))
            except (SolverError, kernels.CapacityError, kernels.NoSupplyError):
                cells.append(VerifyCell(K, float(T), 0, 0, math.nan, "", 0, math.nan, math.nan,
                                        math.nan, math.nan, "model_failed"))
                continue
            runs = run_replications([sim_config_from_steady(params, st, s, **sim_kw) for s in seeds], workers)
            means = np.array([r.mean_trip_duration for r in runs])
            sim_mean = float(means.mean())
            ci = float(stats.t.ppf(0.975, len(means) - 1) * means.std(ddof=1) / math.sqrt(len(means))) \
                if len(means) > 1 else math.nan
            tag, nb = _classify(params, design, st, st.F) if classify else ("", 0)
            cells.append(VerifyCell(
                K=K, total_n_br=float(T), fleet=int(round(st.F)), n_station_init=int(round(st.total_n_bs)),
                model_duration=st.mean_trip_duration, branch=tag, n_branches=nb,
                sim_mean=sim_mean, sim_ci=ci,
                rel_error=abs(st.mean_trip_duration - sim_mean) / sim_mean,
                lost_fraction=float(np.mean([r.lost_fraction for r in runs])), status="ok",
            ))
    return cells


def write_verify_csv(cells, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(VerifyCell.__dataclass_fields__))
        for c in cells:
            w.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in asdict(c).values()])
