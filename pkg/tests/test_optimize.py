import numpy as np
import pytest

from scooter_charging import OptimizerBounds, Scheme, table1_params, validate
from scooter_charging.cost import benchmark_walk_only
from scooter_charging.optimize import (
    InfeasibleError,
    OptimizerOptions,
    benchmark_depot_only,
    optimize_design,
    starting_points,
)

QUICK = dict(n_starts=1, K_values=[10], max_iter=6)


@pytest.fixture(scope="module")
def quick_run(tmp_path_factory):
    p = table1_params(lam=1.0)
    res = optimize_design(p, scheme=Scheme.PW3, options=OptimizerOptions(seed=3, **QUICK))
    path = tmp_path_factory.mktemp("opt") / "log.csv"
    res.write_log(path)
    return p, res, path


def test_result_is_feasible(quick_run):
    p, res, _ = quick_run
    assert validate(p, res.design, OptimizerBounds(), integral=True, tol=1e-8) == []
    assert res.design.K == 10 and float(res.design.Q).is_integer()
    assert res.steady.residual_norm <= 1e-9


def test_result_beats_walking(quick_run):
    p, res, _ = quick_run
    assert res.cost.Z < benchmark_walk_only(p).Z


def test_log_is_reproducible(quick_run, tmp_path):
    p, _, path = quick_run
    again = optimize_design(p, scheme=Scheme.PW3, options=OptimizerOptions(seed=3, **QUICK))
    again.write_log(tmp_path / "log.csv")
    assert (tmp_path / "log.csv").read_bytes() == path.read_bytes()


def test_starting_points_deterministic_and_in_box():
    a = starting_points(4, 6, seed=9, K=10)
    b = starting_points(4, 6, seed=9, K=10)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (6, 4) and np.all((a >= 0) & (a <= 1))
    first = np.full(4, 0.25)
    np.testing.assert_array_equal(starting_points(4, 3, seed=9, K=10, first=first)[0], first)


def test_depot_only_has_no_station_costs():
    p = table1_params(lam=1.0)
    d, c = benchmark_depot_only(p)
    assert d.K == 0 and d.Q == 0 and np.all(d.pi == 0) and np.all(d.n_bs == 0)
    assert c.station_cost == c.charger_cost == c.promotion_cost == 0.0


def test_depot_only_worse_than_walking_at_low_demand():
    p = table1_params(lam=1.0)
    assert benchmark_depot_only(p)[1].Z > benchmark_walk_only(p).Z


def test_empty_station_range_is_infeasible():
    p = table1_params(lam=1.0)
    # spacing in [3.4, 3.6] km admits no integer station grid on a 10 km side
    with pytest.raises(InfeasibleError):
        optimize_design(p, bounds=OptimizerBounds(S_min=3.4, S_max=3.6), options=OptimizerOptions(n_starts=1))


def test_point_bounds_pin_the_design():
    p = table1_params(lam=1.0)
    b = OptimizerBounds(S_min=1.0, S_max=1.0, Q_min=12, Q_max=12, H_min=1.0, H_max=1.0, R_min=20, R_max=20)
    res = optimize_design(p, bounds=b, scheme=Scheme.PW1, options=OptimizerOptions(n_starts=1, max_iter=10))
    d = res.design
    assert (d.K, d.Q, d.H, d.R) == (10, 12.0, 1.0, 20.0)


def test_simultaneous_mode_returns_feasible_design():
    p = table1_params(lam=1.0)
    opts = OptimizerOptions(seed=1, n_starts=1, K_values=[10], max_iter=10, mode="simultaneous")
    res = optimize_design(p, scheme=Scheme.PW1, options=opts)
    assert validate(p, res.design, OptimizerBounds(), integral=True, tol=1e-8) == []
    assert res.steady.residual_norm <= 1e-9
