"""System-wide cost per rider and the truck-plan subproblem."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
from scipy import optimize

from .geometry import trip_type_profile
from .params import DesignVariables, OptimizerBounds, SystemParams
from .steady_state import SteadyState, truck_plan


@dataclass(frozen=True)
class CostBreakdown:
    """Cost components in $/tu; ``Z`` is the total per served rider."""

    station_cost: float
    charger_cost: float
    fleet_cost: float
    repositioning_cost: float
    promotion_cost: float
    rider_time_cost: float
    Z: float
    mean_trip_duration: float
    served_rate: float

    @property
    def total(self) -> float:
        return math.fsum(
            [self.station_cost, self.charger_cost, self.fleet_cost,
             self.repositioning_cost, self.promotion_cost, self.rider_time_cost]
        )

    @property
    def agency_cost(self) -> float:
        """Operator cost per rider (everything but the rider's time)."""
        return (self.total - self.rider_time_cost) / self.served_rate if self.served_rate > 0 else math.nan

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def cost_breakdown(params: SystemParams, steady: SteadyState, design: DesignVariables | None = None) -> CostBreakdown:
    design = design or steady.design
    demand = params.demand
    K2 = design.K**2
    promo = float(np.dot(design.pi, steady.flow.station_inflow[: params.B])) if not design.depot_only else 0.0
    riders = steady.riders
    parts = dict(
        station_cost=params.omega1 * K2,
        charger_cost=params.omega2 * K2 * design.Q,
        fleet_cost=params.gamma * steady.F,
        repositioning_cost=params.kappa * steady.l_e / design.H,
        promotion_cost=promo,
        rider_time_cost=params.beta * riders,
    )
    Z = math.fsum(parts.values()) / demand
    return CostBreakdown(**parts, Z=Z, mean_trip_duration=riders / demand, served_rate=steady.flow.served)


def benchmark_walk_only(params: SystemParams) -> CostBreakdown:
    """Everyone walks the whole trip: ``Z = beta * E[L] / v_w``."""
    prof = trip_type_profile(params.lam, params.L_max)
    duration = prof.mean_length / params.v_w
    demand = params.demand
    return CostBreakdown(0.0, 0.0, 0.0, 0.0, 0.0, params.beta * duration * demand,
                         Z=params.beta * duration, mean_trip_duration=duration, served_rate=demand)


def truck_cost(params: SystemParams, e_f: float, e_r: float, c_f: float, H: float, R: float) -> float:
    """Part of the cost rate that depends on ``H`` and ``R``: scooters waiting
    for or riding on trucks, full scooters waiting at the depot, and truck
    distance."""
    if e_r <= 0:
        return 0.0
    _, l_e, t_on = truck_plan(params, e_f, e_r, H, R)
    scooters = e_f * H / 2 + 2 * e_f * t_on + c_f * H / 2 + e_r * t_on
    return params.gamma * scooters + params.kappa * l_e / H


def optimal_truck_plan(params: SystemParams, e_f: float, e_r: float, c_f: float,
                       bounds: OptimizerBounds, start: tuple[float, float] | None = None) -> tuple[float, float]:
    """Best ``(H, R)`` inside the bounds for fixed repositioning flows.

    Flows do not depend on ``H`` or ``R``, so this small problem can be
    solved separately. For fixed ``H`` the cost is ``a R + b / R`` and the
    optimal ``R`` is closed-form; ``H`` is then found by bounded scalar search.
    """
    if e_r <= 0:
        return start or (bounds.H_max, bounds.R_min)

    def best_R(H):
        # cost terms in R: gamma*(2e_f + e_r)*t_on and kappa*2m*l_f/H
        _, l_e, t_on = truck_plan(params, e_f, e_r, H, 1.0)
        tour = l_e - 2 * (H * e_r) * params.l_f  # part that does not scale with m
        a = params.gamma * (2 * e_f + e_r) * tour / (2 * H * e_r * params.v_t)
        b = params.kappa * 2 * e_r * params.l_f
        R = math.sqrt(b / a) if a > 0 else bounds.R_max
        return min(max(R, bounds.R_min), bounds.R_max)

    def f(logH):
        H = math.exp(logH)
        return truck_cost(params, e_f, e_r, c_f, H, best_R(H))

    lo, hi = math.log(bounds.H_min), math.log(bounds.H_max)
    if hi - lo < 1e-12:
        H = bounds.H_min
    else:
        grid = np.linspace(lo, hi, 25)
        vals = [f(g) for g in grid]
        k = int(np.argmin(vals))
        a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
        res = optimize.minimize_scalar(f, bounds=(a, b), method="bounded", options={"xatol": 1e-10})
        H = math.exp(res.x) if res.fun <= vals[k] else math.exp(grid[k])
    return H, best_R(H)
