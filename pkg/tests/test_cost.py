import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scooter_charging import OptimizerBounds, table1_params
from scooter_charging.cost import benchmark_walk_only, cost_breakdown, optimal_truck_plan, truck_cost
from scooter_charging.sim.verify import verification_design
from scooter_charging.steady_state import solve_steady_state


@pytest.fixture(scope="module")
def state():
    p = table1_params(lam=1.0)
    return p, solve_steady_state(p, verification_design(p, 10), total_n_br=1000.0)


def test_walk_only_cost():
    # mean trip of 2 km walked at 3 km/h, valued at 20 $/h
    assert benchmark_walk_only(table1_params(lam=1.0)).Z == pytest.approx(40.0 / 3.0, abs=1e-12)


def test_walk_only_scales_with_time_value():
    p = table1_params(lam=1.0)
    assert benchmark_walk_only(p.with_(beta=40.0)).Z == pytest.approx(2 * benchmark_walk_only(p).Z, rel=1e-14)


def test_components_add_up(state):
    p, s = state
    c = cost_breakdown(p, s)
    assert c.Z == pytest.approx(c.total / p.demand, rel=1e-14)
    assert c.station_cost == pytest.approx(p.omega1 * 100)
    assert c.charger_cost == pytest.approx(p.omega2 * 100 * 20)
    assert c.fleet_cost == pytest.approx(p.gamma * s.F)
    assert c.rider_time_cost == pytest.approx(p.beta * c.mean_trip_duration * p.demand)
    assert c.agency_cost == pytest.approx(c.Z - p.beta * c.mean_trip_duration, rel=1e-12)


def test_promotion_cost_is_paid_per_station_dropoff(state):
    p, s = state
    c = cost_breakdown(p, s)
    want = sum(s.design.pi[b] * s.flow.station_inflow[b] for b in range(p.B))
    assert c.promotion_cost == pytest.approx(want, rel=1e-12)
    assert c.promotion_cost > 0


def test_trip_duration_exceeds_ride_time(state):
    p, s = state
    c = cost_breakdown(p, s)
    assert c.mean_trip_duration > 2.0 / p.v_s


@given(e=st.floats(0.5, 200), c_f=st.floats(0, 200))
def test_truck_plan_beats_default(e, c_f):
    p = table1_params(lam=1.0)
    b = OptimizerBounds()
    H, R = optimal_truck_plan(p, e, e, c_f, b)
    assert b.H_min - 1e-12 <= H <= b.H_max + 1e-12 and b.R_min <= R <= b.R_max
    best = truck_cost(p, e, e, c_f, H, R)
    for H0 in (b.H_min, 1.0, b.H_max):
        for R0 in (b.R_min, 20.0, b.R_max):
            assert best <= truck_cost(p, e, e, c_f, H0, R0) * (1 + 1e-6)


def test_no_repositioning_costs_nothing():
    p = table1_params(lam=1.0)
    assert truck_cost(p, 0.0, 0.0, 0.0, 1.0, 20.0) == 0.0
    assert math.isfinite(sum(optimal_truck_plan(p, 0.0, 0.0, 0.0, OptimizerBounds())))
