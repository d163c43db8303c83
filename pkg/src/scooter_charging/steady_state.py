"""Flow rates, conservation balances and the steady state of the scooter
state network at a fixed design.

Scooter states are (SoC ``b``, status ``i``) with ``i`` in ``w`` (booked),
``u`` (in use), ``r`` (idle at a random location), ``s`` (at a station),
``t`` (on a truck) and ``f`` (at the depot).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace, field

import numpy as np
from scipy import optimize

from . import kernels
from .geometry import trip_type_profile
from .params import DesignVariables, SystemParams

log = logging.getLogger(__name__)

STATUSES = ("w", "u", "r", "s", "t", "f")


class SolverError(RuntimeError):
    """The steady-state iteration did not converge."""


@dataclass(frozen=True, eq=False)
class FlowRates:
    """All transition rates (trips/tu).

    Booking and drop-off matrices have shape ``(B+1, L_max)`` and are indexed
    ``[b, bhat - 1]`` by the *pre-trip* SoC ``b``; the drop-off lands at SoC
    ``b - bhat``. ``c[b]`` (``b = 0..B-1``) is the station charging rate from
    ``b`` to ``b + 1``.
    """

    a_s: np.ndarray
    a_r: np.ndarray
    d_s: np.ndarray
    d_r: np.ndarray
    c: np.ndarray
    c_f: float
    e_f: float
    e_r: float
    # kernel values kept for reporting and the fleet closure
    P_C1: np.ndarray = field(default=None)
    P_C2: np.ndarray = field(default=None)
    P_Q: float = 0.0
    P_pi: np.ndarray = field(default=None)
    hazard_s: np.ndarray = field(default=None)

    @property
    def B(self) -> int:
        return self.a_s.shape[0] - 1

    @property
    def L_max(self) -> int:
        return self.a_s.shape[1]

    @property
    def a_s_total(self) -> np.ndarray:
        return self.a_s.sum(axis=1)

    @property
    def a_r_total(self) -> np.ndarray:
        return self.a_r.sum(axis=1)

    @property
    def p(self) -> np.ndarray:
        return self.a_s_total + self.a_r_total

    def _landing(self, d: np.ndarray) -> np.ndarray:
        # total drop-off inflow by post-trip SoC
        out = np.zeros(self.B + 1)
        for j in range(self.L_max):
            bhat = j + 1
            out[: self.B + 1 - bhat] += d[bhat:, j]
        return out

    @property
    def station_inflow(self) -> np.ndarray:
        return self._landing(self.d_s)

    @property
    def random_inflow(self) -> np.ndarray:
        return self._landing(self.d_r)

    @property
    def served(self) -> float:
        return float(self.a_s.sum() + self.a_r.sum())

    @classmethod
    def zeros(cls, B: int, L_max: int) -> "FlowRates":
        z = np.zeros((B + 1, L_max))
        return cls(z, z.copy(), z.copy(), z.copy(), np.zeros(B), 0.0, 0.0, 0.0)


def _kernel_values(params: SystemParams, design: DesignVariables):
    B, L = params.B, params.L_max
    K, Q = design.K, design.Q
    n_bs = np.asarray(design.n_bs, dtype=float)
    n_br = np.asarray(design.n_br, dtype=float).copy()
    n_br[0] = 0.0
    theta = design.weights.theta
    N_s = float(n_bs.sum())
    P1 = np.zeros(L)
    P2 = np.ones(L)
    N_r = np.zeros(L)
    weighted = np.zeros(L)
    for j in range(L):
        bhat = j + 1
        N_r[j] = float(n_br[bhat:].sum())
        weighted[j] = float(theta[j] @ n_bs)
        if design.depot_only:
            P1[j] = 0.0
            continue
        N_suit = float(n_bs[theta[j] > 0].sum())
        P1[j] = kernels.p_c1(N_s, min(N_suit, N_s), K, Q) if weighted[j] > 0 else 0.0
        P2[j] = kernels.p_c2(N_r[j], K)
    return n_bs, n_br, N_s, P1, P2, N_r, weighted


def compute_rates(params: SystemParams, design: DesignVariables) -> FlowRates:
    """Booking, drop-off and charging rates implied by the idle counts.

    Raises :class:`kernels.NoSupplyError` if some trip type has no suitable
    random-location scooter (its residual demand would have nowhere to go).
    """
    B, L = params.B, params.L_max
    prof = trip_type_profile(params.lam, L)
    demand = prof.lambda_hat * params.phi**2
    theta = design.weights.theta
    n_bs, n_br, N_s, P1, P2, N_r, weighted = _kernel_values(params, design)

    a_s = np.zeros((B + 1, L))
    a_r = np.zeros((B + 1, L))
    hazard = np.zeros(B + 1)  # per-scooter booking rate at stations, by SoC
    for j in range(L):
        bhat = j + 1
        at_station = P1[j] * P2[j]
        if at_station > 0:
            per_weight = at_station * demand[j] / weighted[j]
            hazard += theta[j] * per_weight
            a_s[:, j] = theta[j] * n_bs * per_weight
        rest = (1.0 - at_station) * demand[j]
        if rest > 0:
            if N_r[j] <= 0:
                raise kernels.NoSupplyError(f"trip type {bhat} has no suitable random-location scooter")
            a_r[bhat:, j] = n_br[bhat:] / N_r[j] * rest

    if design.depot_only:
        P_Q = 0.0
        P_pi = np.zeros(B)
    else:
        P_Q = kernels.p_q(N_s, design.K, design.Q)
        S = params.phi / design.K
        P_pi = np.array([kernels.p_pi(x, params.beta, S, params.v_w) for x in design.pi])

    booked = a_s + a_r
    d_s = np.zeros_like(booked)
    for j in range(L):
        bhat = j + 1
        d_s[bhat:, j] = P_Q * P_pi[: B + 1 - bhat] * booked[bhat:, j]
    d_r = booked - d_s

    flows = FlowRates(a_s, a_r, d_s, d_r, np.zeros(B), 0.0, 0.0, 0.0)
    inflow_s = flows.station_inflow
    tau = np.asarray(params.tau)
    c = np.zeros(B)
    prev = 0.0
    for b in range(B):
        prev = (inflow_s[b] + prev) * math.exp(-hazard[b] * tau[b])
        c[b] = prev
    e_f = float(flows.random_inflow[0])
    return FlowRates(
        a_s, a_r, d_s, d_r, c,
        c_f=e_f, e_f=e_f, e_r=float(a_r[B].sum()),
        P_C1=P1, P_C2=P2, P_Q=P_Q, P_pi=P_pi, hazard_s=hazard,
    )


def conservation_residuals(flow: FlowRates) -> np.ndarray:
    """Node balances (outflow minus inflow), length ``2B + 2``.

    Order: station charging levels ``b = 1..B-1``; station SoC 0; station
    SoC ``B``; random locations ``b = 1..B-1``; random SoC 0 (truck pickup
    ``e_f``); depot balance ``e_f - e_r``. The balance of full random
    scooters (``a_{B,r} = e_r``) holds by construction of ``e_r``. Summing
    all entries except the last and subtracting the last gives zero whenever
    drop-offs partition bookings.
    """
    B = flow.B
    a_s, a_r = flow.a_s_total, flow.a_r_total
    Ds, Dr = flow.station_inflow, flow.random_inflow
    c = flow.c
    res = np.empty(2 * B + 2)
    for b in range(1, B):
        res[b - 1] = c[b] + a_s[b] - Ds[b] - c[b - 1]
    res[B - 1] = c[0] - Ds[0] if B >= 1 else 0.0
    res[B] = a_s[B] - c[B - 1]
    for b in range(1, B):
        res[B + b] = a_r[b] - Dr[b]
    res[2 * B] = flow.e_f - Dr[0]
    res[2 * B + 1] = flow.e_f - flow.e_r
    return res


def global_balance_weights(B: int) -> np.ndarray:
    """Weights ``w`` with ``w @ conservation_residuals(flow) == 0`` identically."""
    w = np.ones(2 * B + 2)
    w[-1] = -1.0
    return w


def _station_closure(params: SystemParams, flow: FlowRates, n_bs: np.ndarray) -> np.ndarray:
    """Count form of the station balances.

    Combining the charging completion rate with ``a_{b,s} = h_b n_bs`` gives
    ``n_bs = I_b (1 - exp(-h_b tau_b)) / h_b`` (mean sojourn of a scooter
    that leaves on the first booking or the charge completion). At zero
    hazard it reduces to ``I_b tau_b``, which also pins the SoC-0 count whose
    flow balance is otherwise vacuous.
    """
    B = params.B
    tau = np.asarray(params.tau)
    h = flow.hazard_s if flow.hazard_s is not None else np.zeros(B + 1)
    inflow = flow.station_inflow[:B] + np.concatenate([[0.0], flow.c[:-1]])
    x = h[:B] * tau
    safe = np.where(x > 1e-12, x, 1.0)
    sojourn = np.where(x > 1e-12, -np.expm1(-x) / safe, 1.0 - x / 2) * tau
    return n_bs[:B] - inflow * sojourn


@dataclass(frozen=True, eq=False)
class SteadyState:
    """Resolved counts ``n[b, i]`` (columns in :data:`STATUSES` order), flows
    and truck plan."""

    params: SystemParams
    design: DesignVariables
    n: np.ndarray
    flow: FlowRates
    m: float
    l_e: float
    F: float
    pickup_distance: np.ndarray
    residual_norm: float = math.nan

    def count(self, b: int, status: str) -> float:
        return float(self.n[b, STATUSES.index(status)])

    @property
    def riders(self) -> float:
        return float(self.n[:, 0].sum() + self.n[:, 1].sum())

    @property
    def mean_trip_duration(self) -> float:
        return self.riders / self.params.demand

    @property
    def total_n_br(self) -> float:
        """Idle random-location scooters available for service (SoC > 0)."""
        return float(self.n[1:, 2].sum())

    @property
    def total_n_bs(self) -> float:
        return float(self.n[:, 3].sum())


def truck_plan(params: SystemParams, e_f: float, e_r: float, H: float, R: float) -> tuple[float, float, float]:
    """``(m, l_e, t_on)``: trucks per dispatch, route length per dispatch and
    the mean time a scooter spends on a truck (one way).

    The tour visits ``H (e_r + e_f)`` points; its length follows the
    continuum approximation ``0.95 sqrt(area * points)`` plus ``2 l_f`` per
    truck for the depot line-haul.
    """
    m = H * e_r / R
    if m <= 0:
        return 0.0, 0.0, 0.0
    l_e = 2 * m * params.l_f + 0.95 * math.sqrt(params.phi**2 * (H * e_r + H * e_f))
    return m, l_e, l_e / (2 * m * params.v_t)


def close_fleet(params: SystemParams, design: DesignVariables, flow: FlowRates, rel_tol: float = 1e-6) -> SteadyState:
    """Fill in booked, in-use, truck and depot counts by Little's law."""
    if not design.H > 0 or not design.R > 0:
        raise ValueError("headway H and truck load R must be positive")
    e_f, e_r = flow.e_f, flow.e_r
    if abs(e_f - e_r) > rel_tol * max(1.0, abs(e_f), abs(e_r)):
        raise ValueError(f"repositioning flows unbalanced: e_f={e_f:g}, e_r={e_r:g}")
    B, L = params.B, params.L_max
    prof = trip_type_profile(params.lam, L)
    n_bs, n_br, N_s, P1, _, N_r, _ = _kernel_values(params, design)
    K = design.K
    S = params.phi / K if K > 0 else 0.0

    lp = np.zeros(L)
    booked = flow.a_s + flow.a_r
    for j in range(L):
        if booked[:, j].sum() > 0:
            lp[j] = kernels.expected_pickup_distance(N_r[j], K, S, params.phi, P1[j] if K > 0 else 0.0)
    n = np.zeros((B + 1, len(STATUSES)))
    n[:, 0] = booked @ lp / params.v_w
    n[:, 1] = (flow.d_s + flow.d_r) @ prof.L_hat / params.v_s
    n[:, 2] = n_br
    n[:, 3] = n_bs

    m, l_e, on_truck = truck_plan(params, e_f, e_r, design.H, design.R)
    H = design.H
    n[0, 2] = e_f * H / 2 + e_f * on_truck
    n[0, 4] = e_f * on_truck
    n[0, 5] = params.total_charge_time * flow.c_f
    n[B, 5] += flow.c_f * H / 2
    n[B, 4] += e_r * on_truck
    F = float(n.sum())
    res = float(np.max(np.abs(conservation_residuals(flow))))
    return SteadyState(params, design, n, flow, m, l_e, F, lp, res)


# ---------------------------------------------------------------------------
# root solve at fixed design


@dataclass
class SolverOptions:
    tol: float = 1e-9  # infinity norm of the conservation residuals, trips/tu
    max_newton: int = 60
    max_fixed_point: int = 200
    fixed_point_tol: float = 1e-6
    fd_step: float = 1e-7


def _unpack(params, x, depot_only):
    B = params.B
    n_bs = np.zeros(B + 1)
    n_br = np.zeros(B + 1)
    if depot_only:
        n_br[1:] = x
    else:
        n_bs[:] = x[: B + 1]
        n_br[1:] = x[B + 1:]
    return n_bs, n_br


def _pack(n_bs, n_br, depot_only):
    if depot_only:
        return np.array(n_br[1:], dtype=float)
    return np.concatenate([n_bs, n_br[1:]]).astype(float)


class _System:
    """Square residual system in the idle counts for one fixed design."""

    def __init__(self, params, design, total_n_br, total_n_bs):
        self.params = params
        self.design = design
        self.depot_only = design.depot_only
        self.total_n_br = total_n_br
        self.total_n_bs = total_n_bs
        self.scale = max(params.demand, 1e-12)
        self.cap = design.K**2 * design.Q if not self.depot_only else 0.0

    def design_at(self, x):
        n_bs, n_br = _unpack(self.params, x, self.depot_only)
        return self.design.with_(n_bs=n_bs, n_br=n_br)

    def flows(self, x):
        return compute_rates(self.params, self.design_at(x))

    def residual(self, x):
        """Scaled square residual vector (flow rows / demand, count rows / total)."""
        B = self.params.B
        flow = self.flows(x)
        full = conservation_residuals(flow) / self.scale
        n_bs, n_br = _unpack(self.params, x, self.depot_only)
        if self.depot_only:
            rows = list(full[B + 1: 2 * B])  # random levels 1..B-1
            norm = (n_br.sum() - self.total_n_br) / max(self.total_n_br, 1.0)
            return np.array(rows + [norm])
        closure = _station_closure(self.params, flow, n_bs)
        count_scale = max(self.total_n_br or 0.0, self.total_n_bs or 0.0, 1.0)
        rows = list(closure / count_scale)  # station levels 0..B-1
        rows += list(full[B + 1: 2 * B])  # random levels 1..B-1
        rows.append(full[2 * B + 1])  # depot
        if self.total_n_bs is not None:
            rows.append((n_bs.sum() - self.total_n_bs) / count_scale)
        else:
            rows.append((n_br.sum() - self.total_n_br) / count_scale)
        return np.array(rows)

    def project(self, x):
        x = np.maximum(x, 0.0)
        if not self.depot_only:
            B = self.params.B
            s = x[: B + 1].sum()
            if s > self.cap * (1 - 1e-9):
                x[: B + 1] *= self.cap * (1 - 1e-9) / s
        return x


def _fixed_point(sys: _System, x, opts: SolverOptions):
    """Damped sweep that maps flows back to counts; gives Newton a good start."""
    params = sys.params
    B = params.B
    tau = np.asarray(params.tau)
    for it in range(opts.max_fixed_point):
        flow = sys.flows(x)
        n_bs, n_br = _unpack(params, x, sys.depot_only)
        new_bs = np.zeros(B + 1)
        new_br = np.zeros(B + 1)
        if not sys.depot_only:
            new_bs[:B] = n_bs[:B] - _station_closure(params, flow, n_bs)
            h = flow.hazard_s[B]
            new_bs[B] = flow.c[B - 1] / h if h > 0 else n_bs[B]
        # random levels: keep the per-scooter booking hazard, rebalance counts
        a_r = flow.a_r_total
        inflow = flow.random_inflow
        inflow[B] = flow.e_f
        g = np.divide(a_r, n_br, out=np.zeros(B + 1), where=n_br > 0)
        new_br[1:] = np.where(g[1:] > 0, inflow[1:] / np.where(g[1:] > 0, g[1:], 1.0), n_br[1:])
        if sys.total_n_bs is not None and not sys.depot_only:
            tot = new_bs.sum()
            if tot > 0:
                new_bs *= sys.total_n_bs / tot
        elif sys.total_n_br is not None:
            tot = new_br.sum()
            if tot > 0:
                new_br *= sys.total_n_br / tot
        x_new = sys.project(_pack(new_bs, new_br, sys.depot_only))
        step = np.max(np.abs(x_new - x)) / max(np.max(np.abs(x)), 1.0)
        x = 0.5 * x + 0.5 * x_new
        if step < opts.fixed_point_tol:
            break
    return x


def _jacobian(sys: _System, x, f0, step):
    J = np.empty((len(f0), len(x)))
    for k in range(len(x)):
        h = step * max(abs(x[k]), 1.0)
        xp = x.copy()
        xp[k] += h
        try:
            J[:, k] = (sys.residual(xp) - f0) / h
        except kernels.CapacityError:
            xm = x.copy()
            xm[k] -= h
            J[:, k] = (f0 - sys.residual(xm)) / h
    return J


def _newton(sys: _System, x, opts: SolverOptions):
    f = sys.residual(x)
    fn = np.max(np.abs(f))
    for it in range(opts.max_newton):
        J = _jacobian(sys, x, f, opts.fd_step)
        try:
            dx = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(J, -f, rcond=None)[0]
        t = 1.0
        improved = False
        while t > 1e-6:
            xt = sys.project(x + t * dx)
            try:
                ft = sys.residual(xt)
            except (kernels.CapacityError, kernels.NoSupplyError):
                t *= 0.5
                continue
            fnt = np.max(np.abs(ft))
            if fnt < (1 - 1e-4 * t) * fn or fnt < 1e-15:
                improved = True
                break
            t *= 0.5
        if not improved:
            break
        x, f, fn = xt, ft, fnt
        if fn < 1e-14:
            break
    return x


def _newton_log(sys: _System, x, opts: SolverOptions):
    """Damped Newton in ``u = log(n)``; keeps every count strictly positive,
    which the random-location shares need to stay servable."""
    floor = 1e-300
    u = np.log(np.maximum(x, 1e-8 * max(np.max(x), 1.0)))

    def F(v):
        return sys.residual(np.exp(v))

    f = F(u)
    fn = np.max(np.abs(f))
    for it in range(opts.max_newton):
        n = np.exp(u)
        J = np.empty((len(f), len(u)))
        for k in range(len(u)):
            h = opts.fd_step
            up = u.copy()
            up[k] += h
            try:
                J[:, k] = (F(up) - f) / h
            except (kernels.CapacityError, kernels.NoSupplyError):
                um = u.copy()
                um[k] -= h
                J[:, k] = (f - F(um)) / h
        try:
            du = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError:
            du = np.linalg.lstsq(J, -f, rcond=None)[0]
        # cap the change of any count at a factor e^2 per step
        big = np.max(np.abs(du))
        if big > 2.0:
            du *= 2.0 / big
        t = 1.0
        improved = False
        while t > 1e-6:
            ut = np.maximum(u + t * du, math.log(floor) / 2)
            try:
                ut = np.log(np.maximum(sys.project(np.exp(ut)), floor))
                ft = F(ut)
            except (kernels.CapacityError, kernels.NoSupplyError):
                t *= 0.5
                continue
            fnt = np.max(np.abs(ft))
            if fnt < (1 - 1e-4 * t) * fn:
                improved = True
                break
            t *= 0.5
        if not improved:
            break
        u, f, fn = ut, ft, fnt
        if fn < 1e-14:
            break
    return np.exp(u)


def _initial_guess(params, design, total_n_br, total_n_bs):
    B = params.B
    n_bs = np.asarray(design.n_bs, dtype=float)
    n_br = np.asarray(design.n_br, dtype=float).copy()
    n_br[0] = 0.0
    if total_n_br is not None:
        if n_br[1:].sum() > 0:
            n_br *= total_n_br / n_br.sum()
        else:
            n_br[1:] = total_n_br / B
    elif n_br[1:].sum() <= 0:
        n_br[1:] = max(total_n_bs, 1.0) / B
    if not design.depot_only:
        cap = design.K**2 * design.Q
        if total_n_bs is not None:
            n_bs = np.full(B + 1, total_n_bs / (B + 1)) if n_bs.sum() <= 0 else n_bs * total_n_bs / n_bs.sum()
        elif n_bs.sum() <= 0:
            n_bs = np.full(B + 1, 0.1 * cap / (B + 1))
    return _pack(n_bs, n_br, design.depot_only)


def solve_steady_state(
    params: SystemParams,
    design: DesignVariables,
    total_n_br: float | None = None,
    total_n_bs: float | None = None,
    init: np.ndarray | None = None,
    options: SolverOptions | None = None,
) -> SteadyState:
    """Idle counts at which every conservation balance holds.

    ``design`` supplies ``K, Q, H, R, pi`` and the weights; its idle counts
    are only a starting point. Exactly one normalisation is imposed: the
    total of random-location scooters (default, taken from ``design`` when
    neither total is given) or the total at stations. ``init`` overrides the
    starting vector (packed ``n_bs`` then ``n_br[1:]``).
    """
    opts = options or SolverOptions()
    if total_n_br is not None and total_n_bs is not None:
        raise ValueError("fix either the random-location total or the station total, not both")
    if total_n_br is None and total_n_bs is None:
        total_n_br = float(np.sum(design.n_br[1:]))
    if design.depot_only and total_n_bs is not None:
        raise ValueError("the depot-only system has no station scooters")
    if total_n_br is not None and total_n_br <= 0:
        raise kernels.NoSupplyError("need a positive number of random-location scooters")
    sys = _System(params, design, total_n_br, total_n_bs)

    starts = []
    if init is not None:
        starts.append(np.asarray(init, dtype=float))
    starts.append(_initial_guess(params, design, total_n_br, total_n_bs))
    last_err = None
    for x0 in starts:
        try:
            x0 = sys.project(x0.copy())
            x = None
            for attempt in ("swept", "raw"):
                try:
                    xs = _fixed_point(sys, x0, opts) if attempt == "swept" else x0
                    x = _newton_log(sys, xs, opts)
                except (kernels.CapacityError, kernels.NoSupplyError):
                    continue
                if np.max(np.abs(conservation_residuals(sys.flows(x)))) <= opts.tol:
                    break
            if x is None:
                x = x0
            if np.max(np.abs(conservation_residuals(sys.flows(x)))) > opts.tol:
                x = _newton(sys, _fixed_point(sys, x, opts), opts)
            res = np.max(np.abs(conservation_residuals(sys.flows(x))))
            if res > opts.tol:
                x = _hybrid_polish(sys, x)
                res = np.max(np.abs(conservation_residuals(sys.flows(x))))
            if res <= opts.tol and np.all(x >= 0):
                return close_fleet(params, sys.design_at(x), sys.flows(x))
            last_err = SolverError(f"residual {res:.3g} above tolerance {opts.tol:g}")
        except (kernels.CapacityError, kernels.NoSupplyError) as exc:
            last_err = exc
    raise SolverError(f"steady state not found: {last_err}")


def _hybrid_polish(sys: _System, x):
    def fun(y):
        try:
            return sys.residual(np.abs(y))
        except (kernels.CapacityError, kernels.NoSupplyError):
            return np.full(len(y), 1e6)

    sol = optimize.root(fun, x, method="hybr", options={"xtol": 1e-14})
    return sys.project(np.abs(sol.x)) if np.all(np.isfinite(sol.x)) else x


class WarmSolver:
    """Repeated steady-state solves at nearby designs.

    Keeps the last solution and its Jacobian (in log counts) and runs chord
    iterations from there, refreshing the Jacobian only when the contraction
    stalls. Falls back to :func:`solve_steady_state`. Results depend only on
    the call sequence, so searches stay deterministic.
    """

    def __init__(self, params: SystemParams, options: SolverOptions | None = None, max_chord: int = 30):
        self.params = params
        self.options = options or SolverOptions()
        self.max_chord = max_chord
        self.reset()

    def reset(self):
        self._x = self._J = self._key = None
        self._design, self._totals = None, (None, None)

    def _chord(self, sys, x):
        """Chord iterations in plain counts with projection onto ``n >= 0``."""
        opts = self.options
        f = sys.residual(x)
        fn = np.linalg.norm(f)
        J = self._J
        refreshed = False
        for it in range(self.max_chord):
            if np.max(np.abs(conservation_residuals(sys.flows(x)))) <= opts.tol:
                return x
            if J is None:
                J = _jacobian(sys, x, f, opts.fd_step)
                refreshed = True
            try:
                dx = np.linalg.solve(J, -f)
            except np.linalg.LinAlgError:
                return None
            try:
                xt = sys.project(x + dx)
                ft = sys.residual(xt)
                fnt = np.linalg.norm(ft)
            except (kernels.CapacityError, kernels.NoSupplyError):
                fnt = np.inf
            if fnt > 0.5 * fn:
                if refreshed:
                    if not fnt < fn:
                        return None
                else:
                    J = None  # stale Jacobian: rebuild at the current point
                    continue
            refreshed = False
            x, f, fn = xt, ft, fnt
            self._J = J
        return None

    def _warm(self, design, total_n_br, total_n_bs, x_prev):
        """Chord, then damped Newton, from ``x_prev``; None when neither converges."""
        sys = _System(self.params, design, total_n_br, total_n_bs)
        x0 = x_prev.copy()
        if total_n_br is not None:
            n_bs, n_br = _unpack(self.params, x0, design.depot_only)
            if n_br.sum() > 0:
                n_br *= total_n_br / n_br.sum()
            x0 = _pack(n_bs, n_br, design.depot_only)
        try:
            x = self._chord(sys, sys.project(x0))
            if x is None:
                xn = _newton(sys, sys.project(x0), replace(self.options, max_newton=8))
                if np.max(np.abs(conservation_residuals(sys.flows(xn)))) <= self.options.tol:
                    x = xn
                    self._J = None
        except (kernels.CapacityError, kernels.NoSupplyError):
            x = None
        return x

    def _continuation(self, design, total_n_br, total_n_bs, substeps=(4, 16)):
        """Walk from the previous design to ``design`` in equal steps of
        ``Q``, the promotions and the log of the fixed total."""
        prev, (T0, S0) = self._design, self._totals
        if prev is None or prev.K != design.K or prev.weights is not design.weights:
            return None
        if (T0 is None) != (total_n_br is None):
            return None
        for n in substeps:
            x = self._x
            self._J = None
            for j in range(1, n + 1):
                t = j / n
                d = design.with_(Q=(1 - t) * prev.Q + t * design.Q, pi=(1 - t) * prev.pi + t * design.pi)
                T = T0 ** (1 - t) * total_n_br ** t if total_n_br is not None else None
                S = S0 ** (1 - t) * total_n_bs ** t if total_n_bs is not None else None
                x = self._warm(d, T, S, x)
                if x is None:
                    break
            if x is not None:
                return x
        return None

    def solve(self, design: DesignVariables, total_n_br: float | None = None,
              total_n_bs: float | None = None) -> SteadyState:
        if total_n_br is None and total_n_bs is None:
            total_n_br = float(np.sum(design.n_br[1:]))
        key = (design.depot_only, total_n_bs is None, self.params.B)
        sys = _System(self.params, design, total_n_br, total_n_bs)
        x = None
        if self._x is not None and key == self._key:
            x = self._warm(design, total_n_br, total_n_bs, self._x)
            if x is None:
                x = self._continuation(design, total_n_br, total_n_bs)
        if x is None:
            st = solve_steady_state(self.params, design, total_n_br, total_n_bs,
                                    init=self._x if key == self._key else None, options=self.options)
            x = _pack(st.design.n_bs, st.design.n_br, design.depot_only)
            self._J = None
        else:
            flow = sys.flows(x)
            if np.max(np.abs(conservation_residuals(flow))) > self.options.tol:
                self.reset()
                return self.solve(design, total_n_br, total_n_bs)
            st = close_fleet(self.params, sys.design_at(x), flow)
        self._x, self._key = x, key
        self._design, self._totals = design, (total_n_br, total_n_bs)
        return st


# ---------------------------------------------------------------------------
# multiple equilibria at a fixed fleet size


@dataclass(frozen=True)
class EquilibriumBranch:
    tag: str  # "GOOD" or "BAD"
    steady: SteadyState

    @property
    def mean_trip_duration(self) -> float:
        return self.steady.mean_trip_duration


def fleet_curve(params, design, totals, options=None):
    """Steady states along increasing random-location totals, warm-started."""
    out = []
    init = None
    for T in totals:
        try:
            st = solve_steady_state(params, design, total_n_br=float(T), init=init, options=options)
        except (SolverError, kernels.CapacityError, kernels.NoSupplyError) as exc:
            log.debug("no steady state at total_n_br=%g: %s", T, exc)
            out.append(None)
            init = None
            continue
        out.append(st)
        init = _pack(st.design.n_bs, st.design.n_br, design.depot_only)
    return out


def _feasibility_edge(params, design, T_fail, st_ok: SteadyState, T_ok, options, rel_width=1e-6):
    """Smallest solvable random-location total between a failed and a solved
    grid point, by bisection with warm starts."""
    init = _pack(st_ok.design.n_bs, st_ok.design.n_br, design.depot_only)
    best_T, best = T_ok, st_ok
    lo = T_fail
    while best_T / lo - 1 > rel_width:
        mid = math.sqrt(lo * best_T)
        try:
            st = solve_steady_state(params, design, total_n_br=mid, init=init, options=options)
        except (SolverError, kernels.CapacityError, kernels.NoSupplyError):
            lo = mid
            continue
        best_T, best = mid, st
        init = _pack(st.design.n_bs, st.design.n_br, design.depot_only)
    return best_T, best


def find_equilibria(
    params: SystemParams,
    design: DesignVariables,
    fleet_size: float,
    n_starts: int = 40,
    min_total: float = 1.0,
    options: SolverOptions | None = None,
) -> list[EquilibriumBranch]:
    """All steady states whose operating fleet equals ``fleet_size``.

    The random-location total is scanned on a log grid of ``n_starts`` points
    in ``[min_total, fleet_size]`` with warm starts. Each sign change of
    ``F - fleet_size`` is refined by Brent's method. Where the scan passes
    from unsolvable to solvable totals, the edge is located by bisection:
    the fleet diverges there, so a root may hide between the edge and the
    first solved grid point. Refined roots that miss the target (a branch
    jump rather than a crossing) are discarded; roots closer than 1e-4
    (relative) are merged. The lowest mean trip duration is tagged GOOD.
    """
    if fleet_size <= min_total:
        return []
    totals = list(np.geomspace(min_total, fleet_size, n_starts))
    curve = fleet_curve(params, design, totals, options)
    points = []  # (T, steady) in increasing T
    for k, (T, st) in enumerate(zip(totals, curve)):
        if st is None:
            continue
        if k > 0 and curve[k - 1] is None:
            T_edge, st_edge = _feasibility_edge(params, design, totals[k - 1], st, T, options)
            if T_edge < T:
                points.append((T_edge, st_edge))
        points.append((T, st))

    roots = []
    for (T0, s0), (T1, s1) in zip(points, points[1:]):
        g0, g1 = s0.F - fleet_size, s1.F - fleet_size
        if g0 == 0:
            roots.append(s0)
        if g0 * g1 >= 0:
            continue
        init = _pack(s0.design.n_bs, s0.design.n_br, design.depot_only)

        def gap(T):
            return solve_steady_state(params, design, total_n_br=T, init=init, options=options).F - fleet_size

        try:
            T = optimize.brentq(gap, T0, T1, xtol=1e-10, rtol=1e-12)
            st = solve_steady_state(params, design, total_n_br=T, init=init, options=options)
        except (SolverError, ValueError) as exc:
            log.debug("bracket [%g, %g] failed: %s", T0, T1, exc)
            continue
        if abs(st.F - fleet_size) <= 1e-6 * fleet_size:
            roots.append(st)
        else:
            log.debug("branch jump near total_n_br=%g discarded", T)
    if points and points[-1][1].F == fleet_size:
        roots.append(points[-1][1])
    distinct: list[SteadyState] = []
    for st in roots:
        if all(abs(st.total_n_br - o.total_n_br) > 1e-4 * max(o.total_n_br, 1.0) for o in distinct):
            distinct.append(st)
    distinct.sort(key=lambda s: s.mean_trip_duration)
    return [EquilibriumBranch("GOOD" if i == 0 else "BAD", st) for i, st in enumerate(distinct)]
