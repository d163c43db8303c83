"""Event-driven agent-based simulation of the scooter system.

Riders arrive as a Poisson process, book the nearest suitable scooter among
random-location scooters and the station nearest to their origin, walk to
it, ride, and drop it at their destination or, if a promotion beats the
walk, at the station nearest to the destination. Station scooters charge
one level per ``tau_b``; trucks collect depleted random scooters every
``H`` and bring fully charged ones from the depot.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, fields
from typing import TextIO

import numpy as np

from ..geometry import StationGrid, nearest_station
from ..params import PriorityWeights, SystemParams
from .routing import AnnealSchedule, plan_routes

# status codes, aligned with the model's state columns
W, U, R_, S_, T_, F_ = range(6)
STATUS_NAMES = ("w", "u", "r", "s", "t", "f")

_ARRIVAL, _PICKUP, _DROPOFF, _CHARGE, _DISPATCH, _TRUCK_STOP, _TRUCK_BACK, _DEPOT_READY = range(8)


@dataclass(frozen=True, eq=False)
class SimConfig:
    params: SystemParams
    K: int
    Q: int
    H: float
    R: int
    pi: np.ndarray  # promotion by post-trip SoC, length B
    weights: PriorityWeights
    n_station_init: int  # scooters placed at stations at t = 0
    fleet: int
    horizon_h: float = 2000.0
    warmup_h: float = 800.0
    cooldown_h: float = 200.0
    seed: int = 0
    anneal: AnnealSchedule = field(default_factory=AnnealSchedule)
    cell_size: float = 0.5  # grid index resolution for random scooters
    trace: TextIO | None = None  # optional line-delimited event trace

    def __post_init__(self):
        if not self.horizon_h > self.warmup_h + self.cooldown_h:
            raise ValueError("horizon must exceed warm-up plus cool-down")
        if self.fleet < 0 or self.n_station_init < 0 or self.n_station_init > self.fleet:
            raise ValueError("need 0 <= n_station_init <= fleet")
        if self.K > 0 and self.n_station_init > self.K * self.K * self.Q:
            raise ValueError("initial station scooters exceed charger capacity")
        if self.K == 0 and self.n_station_init:
            raise ValueError("no stations to place scooters at")
        if len(self.pi) != self.params.B:
            raise ValueError("pi must have B entries")

    @property
    def window(self) -> tuple[float, float]:
        return self.warmup_h, self.horizon_h - self.cooldown_h


@dataclass
class ScooterAgent:
    """One scooter; ``station`` is -1 unless it is physically at a station."""

    id: int
    soc: int
    status: int
    x: float = 0.0
    y: float = 0.0
    station: int = -1
    charge_version: int = 0
    truck_assigned: bool = False


@dataclass
class SimStats:
    mean_trip_duration: float
    p50_trip_duration: float
    p90_trip_duration: float
    n_requests: int
    n_served: int
    n_lost: int
    lost_fraction: float
    mean_counts: np.ndarray  # (B + 1, 6), time average over the window
    bookings_station: np.ndarray  # per trip type
    bookings_random: np.ndarray
    dropoffs_station: np.ndarray
    dropoffs_random: np.ndarray
    walk_station: np.ndarray  # mean pickup walk [km] per trip type, station bookings
    walk_random: np.ndarray  # same for random-location bookings
    promotion_paid: float
    truck_distance: float
    nn_truck_distance: float  # same dispatches routed by nearest neighbour
    n_dispatches: int
    mean_pickup_wait: float
    booking_rate: float
    window_h: float

    @property
    def mean_booked(self) -> float:
        return float(self.mean_counts[:, W].sum())

    def as_rows(self) -> list[tuple[str, str]]:
        """Flat ``(name, value)`` rows at full precision."""
        rows = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                for idx in np.ndindex(v.shape):
                    rows.append((f.name + "[" + ",".join(map(str, idx)) + "]", repr(float(v[idx]))))
            elif isinstance(v, (float, np.floating)):
                rows.append((f.name, repr(float(v))))
            else:
                rows.append((f.name, repr(int(v))))
        return rows


class _Sim:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        p = cfg.params
        self.p = p
        self.rng = np.random.default_rng(cfg.seed)
        self.B = p.B
        self.t = 0.0
        self.w0, self.w1 = cfg.window
        self.events: list = []
        self.seq = 0
        self.grid = StationGrid(cfg.K, p.phi) if cfg.K > 0 else None
        self.depot = (p.phi / 2.0, p.phi / 2.0 - p.l_f)
        self.theta = np.asarray(cfg.weights.theta, dtype=float)
        self.pi = np.asarray(cfg.pi, dtype=float)
        # random-location index for scooters with soc >= 1
        self.G = max(1, math.ceil(p.phi / cfg.cell_size))
        self.cell = p.phi / self.G
        self.cells: list[set] = [set() for _ in range(self.G * self.G)]
        self.cell_of: dict[int, int] = {}
        self.depleted: dict[int, None] = {}  # soc-0 random scooters, insertion-ordered
        n_st = cfg.K * cfg.K
        self.st_idle = [[[] for _ in range(self.B + 1)] for _ in range(n_st)]
        self.st_pos: dict[int, int] = {}
        self.st_present = [0] * n_st
        self.st_reserved = [0] * n_st
        self.depot_ready: dict[int, None] = {}
        self.agents: list[ScooterAgent] = []
        # time-weighted counts
        self.count = [[0] * 6 for _ in range(self.B + 1)]
        self.area = [[0.0] * 6 for _ in range(self.B + 1)]
        self.last = [[0.0] * 6 for _ in range(self.B + 1)]
        # tallies
        L = p.L_max
        self.durations: list[float] = []
        self.waits: list[float] = []
        self.n_req = self.n_lost = 0
        self.book_s = np.zeros(L)
        self.walk_s = np.zeros(L)
        self.walk_r = np.zeros(L)
        self.book_r = np.zeros(L)
        self.drop_s = np.zeros(L)
        self.drop_r = np.zeros(L)
        self.promo_paid = 0.0
        self.truck_dist = 0.0
        self.nn_dist = 0.0
        self.n_dispatch = 0
        self._arrival_buf = None
        self._arrival_k = 0

    # -- bookkeeping -------------------------------------------------------
    def _in_window(self, t):
        return self.w0 <= t < self.w1

    def _move(self, a: ScooterAgent, soc: int, status: int):
        t = self.t
        for b, s, delta in ((a.soc, a.status, -1), (soc, status, +1)):
            lo, hi = max(self.last[b][s], self.w0), min(t, self.w1)
            if hi > lo:
                self.area[b][s] += self.count[b][s] * (hi - lo)
            self.last[b][s] = t
            self.count[b][s] += delta
        a.soc, a.status = soc, status

    def _push(self, t, kind, payload):
        self.seq += 1
        heapq.heappush(self.events, (t, self.seq, kind, payload))

    def _trace(self, kind, *vals):
        if self.cfg.trace is not None:
            self.cfg.trace.write(f"{self.t:.9f} {kind} " + " ".join(map(str, vals)) + "\n")

    # -- random-location index -------------------------------------------
    def _cell_index(self, x, y):
        G = self.G
        cx = min(max(int(x / self.cell), 0), G - 1)
        cy = min(max(int(y / self.cell), 0), G - 1)
        return cy * G + cx

    def _add_random(self, a: ScooterAgent):
        if a.soc >= 1:
            c = self._cell_index(a.x, a.y)
            self.cells[c].add(a.id)
            self.cell_of[a.id] = c
        else:
            self.depleted[a.id] = None

    def _remove_random(self, a: ScooterAgent):
        c = self.cell_of.pop(a.id)
        self.cells[c].discard(a.id)

    def _nearest_random(self, ox, oy, bhat, bound):
        """Closest random scooter with soc >= bhat strictly nearer than ``bound``."""
        G, c = self.G, self.cell
        cx = min(max(int(ox / c), 0), G - 1)
        cy = min(max(int(oy / c), 0), G - 1)
        best, best_id = bound, -1
        agents = self.agents
        for k in range(0, G + 1):
            if k > 0 and (k - 1) * c >= best:
                break
            if k == 0:
                ring = ((cx, cy),)
            else:
                ring = [(ix, cy - k) for ix in range(cx - k, cx + k + 1)]
                ring += [(ix, cy + k) for ix in range(cx - k, cx + k + 1)]
                ring += [(cx - k, iy) for iy in range(cy - k + 1, cy + k)]
                ring += [(cx + k, iy) for iy in range(cy - k + 1, cy + k)]
            for ix, iy in ring:
                if 0 <= ix < G and 0 <= iy < G:
                    for i in self.cells[iy * G + ix]:
                        a = agents[i]
                        if a.soc >= bhat:
                            d = abs(a.x - ox) + abs(a.y - oy)
                            if d < best or (d == best and best_id >= 0 and i < best_id):
                                best, best_id = d, i
        return best_id, best

    # -- stations ----------------------------------------------------------
    def _station_add_idle(self, a: ScooterAgent, k: int):
        lst = self.st_idle[k][a.soc]
        self.st_pos[a.id] = len(lst)
        lst.append(a.id)

    def _station_remove_idle(self, a: ScooterAgent):
        lst = self.st_idle[a.station][a.soc]
        pos = self.st_pos.pop(a.id)
        last = lst.pop()
        if last != a.id:
            lst[pos] = last
            self.st_pos[last] = pos

    def _station_weight(self, k, bhat):
        row = self.theta[bhat - 1]
        lists = self.st_idle[k]
        return [row[b] * len(lists[b]) if b >= bhat else 0.0 for b in range(self.B + 1)]

    def _schedule_charge(self, a: ScooterAgent):
        if a.soc < self.B:
            a.charge_version += 1
            self._push(self.t + self.p.tau[a.soc], _CHARGE, (a.id, a.charge_version))

    # -- setup -------------------------------------------------------------
    def setup(self):
        cfg, p, rng = self.cfg, self.p, self.rng
        B = self.B
        for i in range(cfg.fleet):
            a = ScooterAgent(i, B, R_)
            self.agents.append(a)
            self.count[B][R_] += 1
        n_st = cfg.K * cfg.K
        placed = 0
        for a in self.agents[: cfg.n_station_init]:
            while True:
                k = int(rng.integers(n_st))
                if self.st_present[k] < cfg.Q:
                    break
            self.st_present[k] += 1
            a.station = k
            a.x, a.y = self.grid.center(k)
            self._move(a, B, S_)
            self._station_add_idle(a, k)
            placed += 1
        for a in self.agents[placed:]:
            a.x, a.y = (float(v) for v in rng.uniform(0, p.phi, size=2))
            self._add_random(a)
        self._push(self._next_arrival_gap(), _ARRIVAL, None)
        self._push(cfg.H, _DISPATCH, None)

    # -- arrivals ----------------------------------------------------------
    def _next_arrival_gap(self):
        return float(self.rng.exponential(1.0 / self.p.demand))

    def _draw_trip(self):
        p, rng = self.p, self.rng
        ox, oy = (float(v) for v in rng.uniform(0, p.phi, size=2))
        while True:
            u, v = rng.uniform(-p.L_max / 2, p.L_max / 2, size=2)
            dx, dy = float(u + v), float(u - v)
            x, y = ox + dx, oy + dy
            length = abs(dx) + abs(dy)
            if 0 <= x <= p.phi and 0 <= y <= p.phi and length > 0:
                return (ox, oy), (x, y), length, max(1, math.ceil(min(length, p.L_max)))

    def on_arrival(self):
        cfg, p = self.cfg, self.p
        t = self.t
        self._push(t + self._next_arrival_gap(), _ARRIVAL, None)
        (ox, oy), (dx, dy), length, bhat = self._draw_trip()
        window = self._in_window(t)
        if window:
            self.n_req += 1
        st_k, st_d, st_w = -1, math.inf, None
        if self.grid is not None:
            k, d = nearest_station((ox, oy), self.grid)
            w = self._station_weight(k, bhat)
            if sum(w) > 0:
                st_k, st_d, st_w = k, d, w
        rid, rd = self._nearest_random(ox, oy, bhat, st_d)
        if rid >= 0:
            a = self.agents[rid]
            self._remove_random(a)
            walk = rd
            from_station = False
        elif st_k >= 0:
            tot = sum(st_w)
            u = self.rng.random() * tot
            acc = 0.0
            b_pick = max(b for b in range(self.B + 1) if st_w[b] > 0)
            for b in range(self.B + 1):
                acc += st_w[b]
                if st_w[b] > 0 and u < acc:
                    b_pick = b
                    break
            lst = self.st_idle[st_k][b_pick]
            a = self.agents[lst[int(self.rng.integers(len(lst)))]]
            self._station_remove_idle(a)
            a.charge_version += 1  # booking interrupts charging
            walk = st_d
            from_station = True
        else:
            if window:
                self.n_lost += 1
            self._trace("lost", bhat)
            return
        if window:
            (self.book_s if from_station else self.book_r)[bhat - 1] += 1
            (self.walk_s if from_station else self.walk_r)[bhat - 1] += walk
            self.waits.append(walk / p.v_w)
        self._move(a, a.soc, W)
        # promotion toward the station nearest the destination
        promo = -1
        if self.grid is not None:
            kd, dd = nearest_station((dx, dy), self.grid)
            post = a.soc - bhat
            if (self.st_present[kd] + self.st_reserved[kd] < cfg.Q
                    and self.pi[post] >= p.beta * dd / p.v_w and self.pi[post] > 0):
                promo = kd
                self.st_reserved[kd] += 1
        self._trace("book", a.id, a.soc, bhat, int(from_station), promo)
        self._push(t + walk / p.v_w, _PICKUP, (a.id, bhat, length, dx, dy, promo, t))

    def on_pickup(self, payload):
        i, bhat, length, dx, dy, promo, t_req = payload
        a = self.agents[i]
        if a.station >= 0:
            self.st_present[a.station] -= 1
            a.station = -1
        self._move(a, a.soc, U)
        self._push(self.t + length / self.p.v_s, _DROPOFF, payload)

    def on_dropoff(self, payload):
        i, bhat, length, dx, dy, promo, t_req = payload
        a = self.agents[i]
        soc = a.soc - bhat
        if soc < 0:
            raise AssertionError("scooter served a trip longer than its range")
        window = self._in_window(t_req)
        if promo >= 0:
            self.st_reserved[promo] -= 1
            self.st_present[promo] += 1
            a.station = promo
            a.x, a.y = self.grid.center(promo)
            self._move(a, soc, S_)
            self._station_add_idle(a, promo)
            self._schedule_charge(a)
            if window:
                self.drop_s[bhat - 1] += 1
                self.promo_paid += self.pi[soc]
        else:
            a.x, a.y = dx, dy
            self._move(a, soc, R_)
            self._add_random(a)
            if window:
                self.drop_r[bhat - 1] += 1
        if window:
            self.durations.append(self.t - t_req)
        self._trace("drop", a.id, soc, promo)

    def on_charge(self, payload):
        i, version = payload
        a = self.agents[i]
        if a.status != S_ or a.charge_version != version:
            return
        self._station_remove_idle(a)
        self._move(a, a.soc + 1, S_)
        self._station_add_idle(a, a.station)
        self._schedule_charge(a)

    # -- trucks ------------------------------------------------------------
    def on_dispatch(self):
        cfg, p, rng = self.cfg, self.p, self.rng
        t = self.t
        self._push(t + cfg.H, _DISPATCH, None)
        picks = [i for i in self.depleted if not self.agents[i].truck_assigned]
        ready = list(self.depot_ready)
        m = math.ceil(max(len(picks), len(ready)) / cfg.R)
        if m == 0:
            return
        drop_pts = rng.uniform(0, p.phi, size=(len(ready), 2))
        pick_pts = np.array([(self.agents[i].x, self.agents[i].y) for i in picks]).reshape(-1, 2)
        routes = plan_routes(self.depot, drop_pts, pick_pts, m, cfg.R, rng, cfg.anneal)
        for i in ready:
            del self.depot_ready[i]
            self._move(self.agents[i], self.B, T_)
        for i in picks:
            self.agents[i].truck_assigned = True
        window = self._in_window(t)
        if window:
            self.n_dispatch += 1
        for route in routes:
            clock = t
            pos = self.depot
            collected = []
            for (kind, j), pt in zip(route.stops, route.points):
                clock += (abs(pt[0] - pos[0]) + abs(pt[1] - pos[1])) / p.v_t
                pos = (float(pt[0]), float(pt[1]))
                if kind == "drop":
                    self._push(clock, _TRUCK_STOP, ("drop", ready[j], pos))
                else:
                    self._push(clock, _TRUCK_STOP, ("pick", picks[j], pos))
                    collected.append(picks[j])
            clock += (abs(self.depot[0] - pos[0]) + abs(self.depot[1] - pos[1])) / p.v_t
            self._push(clock, _TRUCK_BACK, tuple(collected))
            if window:
                self.truck_dist += route.length
                self.nn_dist += _nn_length(self.depot, route.points)

    def on_truck_stop(self, payload):
        kind, i, pos = payload
        a = self.agents[i]
        if kind == "drop":
            a.x, a.y = pos
            self._move(a, self.B, R_)
            self._add_random(a)
        else:
            del self.depleted[i]
            a.truck_assigned = False
            self._move(a, 0, T_)

    def on_truck_back(self, collected):
        ready_at = self.t + self.p.total_charge_time
        for i in collected:
            self._move(self.agents[i], 0, F_)
            self._push(ready_at, _DEPOT_READY, i)

    def on_depot_ready(self, i):
        self._move(self.agents[i], self.B, F_)
        self.depot_ready[i] = None

    # -- main loop ---------------------------------------------------------
    def run(self) -> SimStats:
        self.setup()
        end = self.cfg.horizon_h
        handlers = {
            _PICKUP: self.on_pickup, _DROPOFF: self.on_dropoff, _CHARGE: self.on_charge,
            _TRUCK_STOP: self.on_truck_stop, _TRUCK_BACK: self.on_truck_back, _DEPOT_READY: self.on_depot_ready,
        }
        while self.events:
            t, _, kind, payload = heapq.heappop(self.events)
            if t > end:
                break
            self.t = t
            if kind == _ARRIVAL:
                self.on_arrival()
            elif kind == _DISPATCH:
                self.on_dispatch()
            else:
                handlers[kind](payload)
        self.t = end
        return self._stats()

    def _stats(self) -> SimStats:
        B = self.B
        span = self.w1 - self.w0
        mean = np.zeros((B + 1, 6))
        for b in range(B + 1):
            for s in range(6):
                lo, hi = max(self.last[b][s], self.w0), self.w1
                area = self.area[b][s] + (self.count[b][s] * (hi - lo) if hi > lo else 0.0)
                mean[b, s] = area / span
        dur = np.asarray(self.durations)
        n_served = len(dur)
        return SimStats(
            mean_trip_duration=float(dur.mean()) if n_served else math.nan,
            p50_trip_duration=float(np.percentile(dur, 50)) if n_served else math.nan,
            p90_trip_duration=float(np.percentile(dur, 90)) if n_served else math.nan,
            n_requests=self.n_req,
            n_served=n_served,
            n_lost=self.n_lost,
            lost_fraction=self.n_lost / self.n_req if self.n_req else 0.0,
            mean_counts=mean,
            bookings_station=self.book_s,
            walk_station=self.walk_s / np.maximum(self.book_s, 1),
            walk_random=self.walk_r / np.maximum(self.book_r, 1),
            bookings_random=self.book_r,
            dropoffs_station=self.drop_s,
            dropoffs_random=self.drop_r,
            promotion_paid=self.promo_paid,
            truck_distance=self.truck_dist,
            nn_truck_distance=self.nn_dist,
            n_dispatches=self.n_dispatch,
            mean_pickup_wait=float(np.mean(self.waits)) if self.waits else math.nan,
            booking_rate=len(self.waits) / span,
            window_h=span,
        )


def _nn_length(depot, points) -> float:
    from .routing import nearest_neighbor_tour, rect_matrix, tour_length

    D = rect_matrix(np.vstack([np.asarray(depot, dtype=float), np.asarray(points, dtype=float)]))
    return tour_length(nearest_neighbor_tour(D), D)


def run_simulation(config: SimConfig) -> SimStats:
    """Run one replication; identical configs give identical stats."""
    return _Sim(config).run()
