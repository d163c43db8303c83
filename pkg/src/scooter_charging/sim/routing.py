"""Truck routing for the simulator: capacity-constrained clustering of
drop-off points, then a rectilinear TSP per cluster by simulated annealing."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AnnealSchedule:
    """Geometric cooling; the start temperature is a fraction of the mean
    edge length of the starting tour."""

    start_fraction: float = 0.3
    alpha: float = 0.9
    n_temps: int = 40
    moves_per_node: int = 2


def rect_matrix(points: np.ndarray) -> np.ndarray:
    return np.abs(points[:, None, :] - points[None, :, :]).sum(axis=2)


def tour_length(order, D: np.ndarray) -> float:
    """Closed tour through ``order`` (node 0 is the depot and starts it)."""
    return float(sum(D[order[i], order[(i + 1) % len(order)]] for i in range(len(order))))


def nearest_neighbor_tour(D: np.ndarray) -> list[int]:
    n = D.shape[0]
    order = [0]
    left = set(range(1, n))
    while left:
        last = order[-1]
        nxt = min(left, key=lambda j: (D[last, j], j))
        order.append(nxt)
        left.remove(nxt)
    return order


def anneal_tour(D: np.ndarray, rng: np.random.Generator, schedule: AnnealSchedule = AnnealSchedule()) -> list[int]:
    """2-opt simulated annealing started from the nearest-neighbour tour.

    The best tour seen is returned, so the result is never longer than the
    nearest-neighbour tour.
    """
    order = nearest_neighbor_tour(D)
    n = len(order)
    if n <= 3:
        return order
    cur = list(order)
    cur_len = tour_length(cur, D)
    D = D.tolist()  # scalar lookups are much faster on nested lists
    best, best_len = list(cur), cur_len
    T = schedule.start_fraction * cur_len / n
    moves = schedule.moves_per_node * n
    total = schedule.n_temps * moves
    # segment cur[i..j] with 1 <= i < j <= n-1 is reversed; depot stays first
    ii = rng.integers(1, n, size=total)
    jj = rng.integers(1, n, size=total)
    uu = rng.random(total)
    k = 0
    for _ in range(schedule.n_temps):
        for _ in range(moves):
            i, j, u = int(ii[k]), int(jj[k]), uu[k]
            k += 1
            if i == j:
                continue
            if i > j:
                i, j = j, i
            a, b = cur[i - 1], cur[i]
            c, d = cur[j], cur[(j + 1) % n]
            delta = D[a][c] + D[b][d] - D[a][b] - D[c][d]
            if delta < 0 or (T > 0 and u < math.exp(-delta / T)):
                cur[i: j + 1] = cur[i: j + 1][::-1]
                cur_len += delta
                if cur_len < best_len - 1e-12:
                    best, best_len = list(cur), cur_len
        T *= schedule.alpha
    return best


def _greedy_assign(points: np.ndarray, centers: np.ndarray, cap: int) -> np.ndarray:
    d = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    order = np.argsort(d, axis=None, kind="stable")
    label = np.full(len(points), -1)
    load = np.zeros(len(centers), dtype=int)
    left = len(points)
    for flat in order:
        p, c = divmod(int(flat), len(centers))
        if label[p] < 0 and load[c] < cap:
            label[p] = c
            load[c] += 1
            left -= 1
            if left == 0:
                break
    return label


def constrained_kmeans(points: np.ndarray, k: int, cap: int, rng: np.random.Generator,
                       max_iter: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations with a capacity-respecting greedy assignment.

    Returns ``(labels, centers)``; every cluster holds at most ``cap`` points.
    ``k * cap`` must cover all points.
    """
    n = len(points)
    if k * cap < n:
        raise ValueError("clusters cannot hold every point")
    # k-means++ seeding
    centers = [points[int(rng.integers(n))]]
    for _ in range(1, k):
        d = np.min([((points - c) ** 2).sum(axis=1) for c in centers], axis=0)
        tot = d.sum()
        idx = int(rng.choice(n, p=d / tot)) if tot > 0 else int(rng.integers(n))
        centers.append(points[idx])
    centers = np.array(centers, dtype=float)
    label = _greedy_assign(points, centers, cap)
    for _ in range(max_iter):
        for c in range(k):
            members = points[label == c]
            if len(members):
                centers[c] = members.mean(axis=0)
        new = _greedy_assign(points, centers, cap)
        if np.array_equal(new, label):
            break
        label = new
    return label, centers


@dataclass
class TruckRoute:
    stops: list  # (kind, index) with kind "drop" or "pick", in visiting order
    points: np.ndarray  # coordinates of the stops in visiting order
    length: float  # depot -> stops -> depot


def plan_routes(depot, drops: np.ndarray, picks: np.ndarray, n_trucks: int, R: int,
                rng: np.random.Generator, schedule: AnnealSchedule = AnnealSchedule()) -> list[TruckRoute]:
    """Cluster-first route-second plan for one dispatch.

    Drop-off points are split into ``n_trucks`` clusters of at most ``R``;
    pickups join the cluster with the nearest centre (pickups may overflow a
    cluster). With fewer drop-offs than trucks the pickups are clustered
    instead and drop-offs join the nearest centre.
    """
    drops = np.asarray(drops, dtype=float).reshape(-1, 2)
    picks = np.asarray(picks, dtype=float).reshape(-1, 2)
    if n_trucks <= 0 or (len(drops) == 0 and len(picks) == 0):
        return []
    if len(drops) >= n_trucks:
        d_label, centers = constrained_kmeans(drops, n_trucks, R, rng)
        p_label = _nearest(picks, centers)
    else:
        k = min(n_trucks, max(len(picks), 1))
        p_label, centers = constrained_kmeans(picks, k, max(R, math.ceil(len(picks) / k)), rng)
        d_label = _greedy_assign(drops, centers, R) if len(drops) else np.zeros(0, dtype=int)
    depot = np.asarray(depot, dtype=float)
    routes = []
    for c in range(len(centers)):
        stops = [("drop", int(i)) for i in np.flatnonzero(d_label == c)]
        stops += [("pick", int(i)) for i in np.flatnonzero(p_label == c)]
        if not stops:
            continue
        pts = np.array([drops[i] if kind == "drop" else picks[i] for kind, i in stops])
        D = rect_matrix(np.vstack([depot, pts]))
        order = anneal_tour(D, rng, schedule)
        routes.append(TruckRoute([stops[j - 1] for j in order[1:]], pts[[j - 1 for j in order[1:]]],
                                 tour_length(order, D)))
    return routes


def _nearest(points, centers):
    if len(points) == 0:
        return np.zeros(0, dtype=int)
    d = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d, axis=1)
