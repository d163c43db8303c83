import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from scooter_charging.geometry import (
    StationGrid,
    nearest_station,
    nearest_station_distances,
    sample_offsets,
    sample_trip,
    triangular_cdf,
    trip_type_profile,
)

from .oracles import monte_carlo as mc

# frozen output of tests/oracles/monte_carlo.py (10^6 trials)
MEAN_LENGTH = (2.0006926559554037, 0.000706524519899744)


def test_demand_split_and_type_lengths():
    prof = trip_type_profile(1.0, 3)
    np.testing.assert_allclose(prof.lambda_hat, [1 / 9, 1 / 3, 5 / 9], rtol=0, atol=1e-15)
    assert prof.L_hat[0] == pytest.approx(2 / 3, abs=1e-15)
    assert prof.L_hat[1] == pytest.approx(14 / 9, abs=1e-15)
    assert prof.L_hat[2] == pytest.approx(38 / 15, abs=1e-15)


def test_mean_trip_length_matches_oracle():
    mean, err = MEAN_LENGTH
    assert abs(trip_type_profile(1.0, 3).mean_length - mean) <= 3 * err
    assert trip_type_profile(1.0, 3).mean_length == pytest.approx(2.0, abs=1e-14)


def test_oracle_reproduces_frozen_mean_length():
    mean, err = mc.mean_trip_length(np.random.default_rng(7), trials=100_000)
    assert abs(mean - MEAN_LENGTH[0]) <= 3 * math.hypot(err, MEAN_LENGTH[1])


@given(lam=st.floats(0.01, 100.0), L=st.integers(1, 12))
def test_split_sums_to_demand_and_lengths_increase(lam, L):
    prof = trip_type_profile(lam, L)
    assert prof.lambda_hat.sum() == pytest.approx(lam, rel=1e-12)
    assert np.all(np.diff(prof.L_hat) > 0)


def test_sampled_type_frequencies_and_type2_length(rng):
    d, types = sample_offsets(rng, 1_000_000, 3)
    freq = np.bincount(types, minlength=4)[1:] / len(types)
    np.testing.assert_allclose(freq, [1 / 9, 3 / 9, 5 / 9], atol=0.003)
    length = np.abs(d).sum(axis=1)
    assert length[types == 2].mean() == pytest.approx(14 / 9, abs=0.01)


def test_single_level_trips_are_type_one(rng):
    _, types = sample_offsets(rng, 10_000, 1)
    assert np.all(types == 1)


def test_sample_trip_stays_in_region(rng):
    for _ in range(2000):
        o, dst, bhat = sample_trip(rng, 10.0, 3)
        assert 0 <= dst[0] <= 10 and 0 <= dst[1] <= 10
        assert 1 <= bhat <= 3
        assert abs(o[0] - dst[0]) + abs(o[1] - dst[1]) <= 3 + 1e-12


def test_station_distance_special_points():
    grid = StationGrid(10, 10.0)
    k, d = nearest_station(grid.center(37), grid)
    assert k == 37 and d == 0.0
    _, d = nearest_station((2.0, 3.0), grid)
    assert d == pytest.approx(1.0)


@given(x=st.floats(0, 10), y=st.floats(0, 10), K=st.integers(1, 25))
def test_station_coverage(x, y, K):
    grid = StationGrid(K, 10.0)
    _, d = nearest_station((x, y), grid)
    assert d <= grid.S + 1e-12


def test_station_distance_is_triangular(rng):
    S = 1.0
    pts = rng.uniform(0, 10, size=(1_000_000, 2))
    l = nearest_station_distances(pts, StationGrid(10, 10.0))
    res = stats.kstest(l, lambda x: triangular_cdf(x, S))
    assert res.statistic < 0.005
