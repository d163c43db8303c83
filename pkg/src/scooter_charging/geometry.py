"""Rectilinear geometry of the square service region: trip types, trip
sampling and the station grid."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import trip_type_of_length


@dataclass(frozen=True, eq=False)
class TripTypeProfile:
    lambda_hat: np.ndarray  # demand density per trip type, index bhat - 1
    L_hat: np.ndarray  # mean trip length per trip type

    @property
    def mean_length(self) -> float:
        return float(self.lambda_hat @ self.L_hat / self.lambda_hat.sum())


def trip_type_profile(lam: float, L_max: int) -> TripTypeProfile:
    """Split demand by consumed battery levels.

    Destinations are uniform in the rectilinear ball of radius ``L_max``, so
    the share of type ``bhat`` is the ring area ``(2 bhat - 1) / L_max^2`` and
    its mean length follows from integrating ``l`` over the ring.
    """
    bhat = np.arange(1, L_max + 1, dtype=float)
    lambda_hat = lam * (2 * bhat - 1) / L_max**2
    L_hat = (2.0 / 3.0) * (3 * bhat**2 - 3 * bhat + 1) / (2 * bhat - 1)
    return TripTypeProfile(lambda_hat, L_hat)


def rectilinear(a, b) -> float:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def _diamond_offset(rng: np.random.Generator, radius: float) -> tuple[float, float]:
    # rotated square: |dx| + |dy| = 2 max(|u|, |v|) <= radius
    u, v = rng.uniform(-radius / 2, radius / 2, size=2)
    return u + v, u - v


def sample_destination(rng: np.random.Generator, origin, phi: float, L_max: int):
    """Uniform destination within rectilinear distance ``L_max`` of ``origin``,
    redrawn until it lies inside the region."""
    while True:
        dx, dy = _diamond_offset(rng, L_max)
        x, y = origin[0] + dx, origin[1] + dy
        length = abs(dx) + abs(dy)
        if 0 <= x <= phi and 0 <= y <= phi and length > 0:
            return (x, y), length


def sample_trip(rng: np.random.Generator, phi: float, L_max: int):
    """Draw ``(origin, destination, trip_type)`` for one request."""
    origin = tuple(rng.uniform(0, phi, size=2))
    dest, length = sample_destination(rng, origin, phi, L_max)
    return origin, dest, trip_type_of_length(min(length, L_max), L_max)


def sample_offsets(rng: np.random.Generator, n: int, L_max: int) -> tuple[np.ndarray, np.ndarray]:
    """``n`` boundary-free destination offsets and their trip types."""
    uv = rng.uniform(-L_max / 2, L_max / 2, size=(n, 2))
    d = np.column_stack([uv[:, 0] + uv[:, 1], uv[:, 0] - uv[:, 1]])
    length = np.abs(d).sum(axis=1)
    types = np.clip(np.ceil(length), 1, L_max).astype(int)
    return d, types


@dataclass(frozen=True)
class StationGrid:
    """``K x K`` stations at the centres of a square partition of the region."""

    K: int
    phi: float

    @property
    def S(self) -> float:
        return self.phi / self.K

    @property
    def n_stations(self) -> int:
        return self.K * self.K

    def center(self, index: int) -> tuple[float, float]:
        iy, ix = divmod(index, self.K)
        return ((ix + 0.5) * self.S, (iy + 0.5) * self.S)

    def centers(self) -> np.ndarray:
        return np.array([self.center(i) for i in range(self.n_stations)])

    def _axis_cell(self, x: float) -> int:
        i = math.floor(x / self.S)
        if i > 0 and x == i * self.S:
            i -= 1  # equidistant to both neighbours: lower index wins
        return min(max(i, 0), self.K - 1)


def nearest_station(point, grid: StationGrid) -> tuple[int, float]:
    """Index of the nearest station and the rectilinear distance to it."""
    ix = grid._axis_cell(point[0])
    iy = grid._axis_cell(point[1])
    index = iy * grid.K + ix
    return index, rectilinear(point, grid.center(index))


def nearest_station_distances(points: np.ndarray, grid: StationGrid) -> np.ndarray:
    """Vectorised distance to the nearest station (no index)."""
    S = grid.S
    c = (np.clip(np.floor(points / S), 0, grid.K - 1) + 0.5) * S
    return np.abs(points - c).sum(axis=1)


def triangular_cdf(x, S: float):
    """CDF of the nearest-station distance for a uniform point (triangular on [0, S])."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, S)
    return np.where(x <= S / 2, 2 * x**2 / S**2, 1 - 2 * (S - x) ** 2 / S**2)
