"""Geometric Monte-Carlo oracles for the matching kernels.

These use only numpy and direct simulation of the underlying random
placement, never the package itself. Running the module prints the
estimates that are frozen into the kernel tests:

    python -m tests.oracles.monte_carlo
"""
from __future__ import annotations

import math

import numpy as np

TRIALS = 1_000_000


def _placements(rng, n_scooters, K, Q, n_placements, capped):
    """Station counts of independent uniform placements. With ``capped`` the
    placements are conditioned on no station holding more than ``Q``
    scooters (rejection sampling)."""
    if not capped:
        return rng.multinomial(n_scooters, np.full(K * K, 1.0 / (K * K)), size=n_placements)
    out = []
    need = n_placements
    p = np.full(K * K, 1.0 / (K * K))
    while need > 0:
        batch = rng.multinomial(n_scooters, p, size=max(64, 2 * need))
        ok = batch[(batch <= Q).all(axis=1)]
        out.append(ok[:need])
        need -= len(ok[:need])
    return np.concatenate(out)


def station_has_suitable(rng, N_s, N_suitable, K, Q, capped=False, trials=TRIALS):
    """P(a given station holds >= 1 suitable scooter). Suitable scooters are a
    uniformly random subset, so the suitable count at a station with ``q``
    scooters is hypergeometric. Every station of a placement is one trial;
    the error bar comes from placement-to-placement spread."""
    n_place = math.ceil(trials / (K * K))
    counts = _placements(rng, N_s, K, Q, n_place, capped)
    suitable = rng.hypergeometric(np.full(counts.shape, N_suitable), np.full(counts.shape, N_s - N_suitable), counts)
    per_place = (suitable > 0).mean(axis=1)
    return per_place.mean(), per_place.std(ddof=1) / math.sqrt(n_place)


def station_has_vacancy(rng, N_s, K, Q, capped=False, trials=TRIALS):
    """P(a given station has fewer than ``Q`` scooters)."""
    n_place = math.ceil(trials / (K * K))
    counts = _placements(rng, N_s, K, Q, n_place, capped)
    per_place = (counts < Q).mean(axis=1)
    return per_place.mean(), per_place.std(ddof=1) / math.sqrt(n_place)


def _station_distance(rng, S, n):
    # rider uniform in a cell, distance to its centre
    u = rng.uniform(-S / 2, S / 2, size=(n, 2))
    return np.abs(u).sum(axis=1)


def _nearest_scooter(rng, N, phi, n, chunk=20_000):
    """Distance from the region centre to the nearest of ``N`` uniform
    scooters; only distances up to ``phi / 4`` matter for the callers."""
    out = np.empty(n)
    c = phi / 2
    for i in range(0, n, chunk):
        m = min(chunk, n - i)
        pts = rng.uniform(0, phi, size=(m, N, 2))
        out[i: i + m] = np.abs(pts - c).sum(axis=2).min(axis=1)
    return out


def station_closer(rng, N_r, K, phi=10.0, trials=TRIALS):
    """P(no random-location scooter strictly closer than the nearest station)."""
    S = phi / K
    l = _station_distance(rng, S, trials)
    d = _nearest_scooter(rng, N_r, phi, trials)
    hit = (d >= l).astype(float)
    return hit.mean(), hit.std(ddof=1) / math.sqrt(trials)


def pickup_with_station(rng, N_r, K, phi=10.0, trials=TRIALS):
    """Mean walk when the nearest station has a suitable scooter: the closer
    of the station and the nearest random scooter."""
    S = phi / K
    w = np.minimum(_station_distance(rng, S, trials), _nearest_scooter(rng, N_r, phi, trials))
    return w.mean(), w.std(ddof=1) / math.sqrt(trials)


def nearest_scooter_mean(rng, N_r, phi=10.0, trials=TRIALS):
    d = _nearest_scooter(rng, N_r, phi, trials)
    return d.mean(), d.std(ddof=1) / math.sqrt(trials)


def mean_trip_length(rng, L_max=3, trials=TRIALS):
    """Destinations uniform in the rectilinear ball: rejection from the square."""
    got = []
    n = 0
    while n < trials:
        d = rng.uniform(-L_max, L_max, size=(2 * trials, 2))
        l = np.abs(d).sum(axis=1)
        l = l[l <= L_max]
        got.append(l)
        n += len(l)
    l = np.concatenate(got)[:trials]
    return l.mean(), l.std(ddof=1) / math.sqrt(trials)


P_C1_CASES = [(300, 120, 13, 6), (50, 20, 5, 20), (2573, 1000, 20, 14), (100, 100, 10, 20),
              (400, 150, 10, 10), (1000, 300, 15, 15)]
P_Q_CASES = [(2573, 20, 14), (300, 13, 6), (400, 10, 10), (50, 5, 5), (1000, 15, 15), (120, 5, 8)]
P_C2_CASES = [(100, 10), (10, 5), (30, 20), (200, 15), (50, 5), (400, 20)]
PICKUP_CASES = [(50, 10), (10, 5), (200, 10), (400, 20), (30, 20), (100, 15)]
NEAREST_CASES = [20, 100, 400]


SEED = 20240601


def _rng(section: int, index: int):
    return np.random.default_rng([SEED, section, index])


def _show(name, section, cases, fn):
    print(f"{name} = {{")
    for i, case in enumerate(cases):
        args = case if isinstance(case, tuple) else (case,)
        mean, err = fn(_rng(section, i), *args)
        print(f"    {case!r}: ({float(mean)!r}, {float(err)!r}),")
    print("}")


def main():
    _show("P_C1", 0, P_C1_CASES, station_has_suitable)
    _show("P_C1_CAPPED", 1, P_C1_CASES, lambda r, *c: station_has_suitable(r, *c, capped=True))
    _show("P_Q", 2, P_Q_CASES, station_has_vacancy)
    _show("P_Q_CAPPED", 3, P_Q_CASES, lambda r, *c: station_has_vacancy(r, *c, capped=True))
    _show("P_C2", 4, P_C2_CASES, station_closer)
    _show("PICKUP", 5, PICKUP_CASES, pickup_with_station)
    _show("NEAREST", 6, NEAREST_CASES, nearest_scooter_mean)
    mean, err = mean_trip_length(_rng(7, 0))
    print(f"MEAN_LENGTH = ({float(mean)!r}, {float(err)!r})")


if __name__ == "__main__":
    main()
