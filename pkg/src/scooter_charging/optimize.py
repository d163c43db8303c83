"""Design search: enumerate the station grid size, run multi-start local
searches over the remaining continuous variables, then round the charger
count. Also the depot-only benchmark."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from . import kernels
from .cost import CostBreakdown, cost_breakdown, optimal_truck_plan
from .params import (
    DesignVariables,
    OptimizerBounds,
    PriorityWeights,
    Scheme,
    SystemParams,
    make_priority_weights,
    promotion_cap,
    validate,
)
from .steady_state import (
    SolverError,
    SteadyState,
    WarmSolver,
    _System,
    _pack,
    _unpack,
    close_fleet,
    compute_rates,
    solve_steady_state,
)

log = logging.getLogger(__name__)

PENALTY = 1e4  # objective returned where no steady state exists
_FAILURES = (SolverError, kernels.CapacityError, kernels.NoSupplyError, ValueError, FloatingPointError)


class InfeasibleError(RuntimeError):
    """No feasible design inside the bounds."""


@dataclass
class OptimizerOptions:
    n_starts: int = 10
    seed: int = 0
    n_promoted: int = 4  # promotions pi_b for b >= n_promoted stay at zero
    K_values: Sequence[int] | None = None  # default: every K allowed by the spacing bounds
    mode: str = "bilevel"  # or "simultaneous"
    fd_step: float = 1e-6  # finite-difference step in the scaled [0, 1] variables
    max_iter: int = 80
    ftol: float = 1e-7
    total_min: float = 1.0  # lower bound on the random-location total
    total_max: float | None = None  # default 10 * lambda * phi^2 + 100
    screen_top: int | None = None  # if set, full search only on the best K after screening
    screen_iter: int = 10


@dataclass
class SearchRecord:
    K: int
    start: int
    phase: str  # "continuous" or "round"
    Z_start: float
    Z: float
    total_n_br: float
    total_n_bs: float
    Q: float
    pi: tuple
    H: float
    R: float
    n_evals: int
    success: bool
    message: str


@dataclass
class OptimizationResult:
    design: DesignVariables
    cost: CostBreakdown
    steady: SteadyState
    records: list[SearchRecord] = field(default_factory=list)

    def write_log(self, path):
        write_search_log(self.records, path)


def write_search_log(records: Sequence[SearchRecord], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f for f in SearchRecord.__dataclass_fields__])
        for r in records:
            row = []
            for v in asdict(r).values():
                if isinstance(v, float):
                    row.append(f"{v:.6g}")
                elif isinstance(v, (tuple, list)):
                    row.append(" ".join(f"{x:.6g}" for x in v))
                else:
                    row.append(v)
            w.writerow(row)


def with_truck_plan(params: SystemParams, steady: SteadyState, bounds: OptimizerBounds) -> SteadyState:
    """Re-close a steady state with the best headway and truck load."""
    fl = steady.flow
    H, R = optimal_truck_plan(params, fl.e_f, fl.e_r, fl.c_f, bounds, start=(steady.design.H, steady.design.R))
    return close_fleet(params, steady.design.with_(H=H, R=R), fl)


def evaluate_design(params: SystemParams, design: DesignVariables, total_n_br: float | None = None,
                    total_n_bs: float | None = None, bounds: OptimizerBounds | None = None):
    """Steady state and cost of a design; ``bounds`` re-optimises ``H, R``."""
    st = solve_steady_state(params, design, total_n_br=total_n_br, total_n_bs=total_n_bs)
    if bounds is not None:
        st = with_truck_plan(params, st, bounds)
    return st, cost_breakdown(params, st)


class _Bilevel:
    """Objective over scaled ``[log T, Q, pi_0/cap .. pi_{k-1}/cap]`` in [0, 1]."""

    def __init__(self, params, K, weights, bounds, opts, fixed_Q=None):
        self.params = params
        self.K = K
        self.weights = weights
        self.bounds = bounds
        self.opts = opts
        self.fixed_Q = fixed_Q
        self.cap = promotion_cap(params, K)
        self.k = min(opts.n_promoted, params.B)
        self.logT = (math.log(opts.total_min), math.log(opts.total_max or 10 * params.demand + 100))
        self.solver = WarmSolver(params)
        self.n_evals = 0
        self._cache: dict[bytes, tuple[float, SteadyState | None]] = {}

    @property
    def dim(self):
        return 1 + (self.fixed_Q is None) + self.k

    def decode(self, v):
        v = np.clip(np.asarray(v, dtype=float), 0.0, 1.0)
        lo, hi = self.logT
        T = math.exp(lo + v[0] * (hi - lo))
        i = 1
        if self.fixed_Q is None:
            Q = self.bounds.Q_min + v[1] * (self.bounds.Q_max - self.bounds.Q_min)
            i = 2
        else:
            Q = self.fixed_Q
        pi = np.zeros(self.params.B)
        pi[: self.k] = v[i: i + self.k] * self.cap
        return T, Q, pi

    def encode(self, T, Q, pi):
        lo, hi = self.logT
        v = [(math.log(T) - lo) / (hi - lo)]
        if self.fixed_Q is None:
            span = self.bounds.Q_max - self.bounds.Q_min
            v.append((Q - self.bounds.Q_min) / span if span > 0 else 0.0)
        v.extend(np.asarray(pi[: self.k]) / self.cap)
        return np.clip(np.array(v), 0.0, 1.0)

    def reference(self):
        """First start: one idle scooter per unit demand, mid-range chargers,
        half the promotion cap."""
        Q = 0.5 * (self.bounds.Q_min + self.bounds.Q_max)
        return self.encode(self.params.demand, Q, np.full(self.params.B, 0.5 * self.cap))

    def design(self, Q, pi):
        B = self.params.B
        return DesignVariables(np.zeros(B + 1), np.zeros(B + 1), self.K, Q, pi, 1.0, 20.0, self.weights)

    def evaluate(self, v):
        key = np.asarray(v, dtype=float).tobytes()
        if key in self._cache:
            return self._cache[key]
        self.n_evals += 1
        T, Q, pi = self.decode(v)
        try:
            st = self.solver.solve(self.design(Q, pi), total_n_br=T)
            st = with_truck_plan(self.params, st, self.bounds)
            Z = cost_breakdown(self.params, st).Z
            if not math.isfinite(Z):
                raise ValueError("non-finite cost")
            out = (Z, st)
        except _FAILURES as exc:
            log.debug("K=%d T=%g Q=%g: %s", self.K, T, Q, exc)
            self.solver.reset()
            out = (PENALTY, None)
        self._cache[key] = out
        return out

    def __call__(self, v):
        return self.evaluate(v)[0]


def _repair_start(obj, v0, steps: int = 12):
    """Move an infeasible start up in ``T`` (toward the feasible side of the
    steady-state edge); returns the first point that evaluates."""
    v = np.array(v0, dtype=float)
    if obj(v) < PENALTY:
        return v
    for k in range(1, steps + 1):
        v[0] = v0[0] + (1.0 - v0[0]) * k / steps
        obj.solver.reset()
        if obj(v) < PENALTY:
            return v
    return np.array(v0, dtype=float)


def _local_search(obj, v0, opts: OptimizerOptions):
    res = optimize.minimize(
        obj, v0, method="SLSQP", bounds=[(0.0, 1.0)] * len(v0),
        options={"maxiter": opts.max_iter, "ftol": opts.ftol, "eps": opts.fd_step},
    )
    return res


def starting_points(dim: int, n: int, seed: int, K: int, first=None) -> np.ndarray:
    """Multi-start set: ``first`` (default the box centre), then a scrambled
    Latin hypercube seeded by ``(seed, K)``."""
    pts = [np.full(dim, 0.5) if first is None else np.asarray(first, dtype=float)]
    if n > 1:
        lhs = qmc.LatinHypercube(d=dim, seed=np.random.default_rng([seed, K]))
        pts.extend(lhs.random(n - 1))
    return np.array(pts[:n])


def _record(obj, K, start, phase, Z0, v, Z, st, res):
    T, Q, pi = obj.decode(v)
    return SearchRecord(
        K=K, start=start, phase=phase, Z_start=float(Z0), Z=float(Z),
        total_n_br=T, total_n_bs=st.total_n_bs if st else math.nan, Q=Q,
        pi=tuple(float(x) for x in pi[: obj.k]),
        H=st.design.H if st else math.nan, R=st.design.R if st else math.nan,
        n_evals=obj.n_evals, success=bool(st is not None and getattr(res, "success", True)),
        message=str(getattr(res, "message", "")),
    )


def _continuous_search(params, K, weights, bounds, opts, phase="continuous"):
    """Multi-start SLSQP over the continuous relaxation at one ``K``."""
    records = []
    obj = _Bilevel(params, K, weights, bounds, opts)
    best = (math.inf, None)
    for i, v0 in enumerate(starting_points(obj.dim, opts.n_starts, opts.seed, K, obj.reference())):
        obj.solver.reset()
        v0 = _repair_start(obj, v0)
        Z0 = obj(v0)
        res = _local_search(obj, v0, opts)
        Z, st = obj.evaluate(res.x)
        records.append(_record(obj, K, i, phase, Z0, res.x, Z, st, res))
        if st is not None and Z < best[0]:
            best = (Z, res.x.copy())
    return obj, best, records


def _round_Q(params, K, weights, bounds, opts, obj, v_best):
    """Fix ``Q`` at the floor and ceiling of its relaxed value, re-optimise
    the rest from the relaxed optimum and keep the better one."""
    records = []
    T_best, Q_cont, pi_best = obj.decode(v_best)
    rounded = (math.inf, None)
    for Qi in sorted({math.floor(Q_cont + 1e-9), math.ceil(Q_cont - 1e-9)}):
        if not bounds.Q_min - 1e-9 <= Qi <= bounds.Q_max + 1e-9:
            continue
        sub = _Bilevel(params, K, weights, bounds, opts, fixed_Q=float(Qi))
        # warm the sub-problem at the relaxed optimum so the solver walks to Qi
        obj.solver.reset()
        obj._cache.clear()
        if obj.evaluate(v_best)[1] is not None:
            sub.solver = obj.solver
        v0 = _repair_start(sub, sub.encode(T_best, Qi, pi_best))
        Z0 = sub(v0)
        res = _local_search(sub, v0, opts)
        Z, st = sub.evaluate(res.x)
        x = res.x
        if Z0 < Z:  # keep the better of start and end
            Z, st, x = Z0, sub.evaluate(v0)[1], v0
        records.append(_record(sub, K, -1, "round", Z0, x, Z, st, res))
        if st is not None and Z < rounded[0]:
            rounded = (Z, st)
    return rounded[1], records


def _search_K(params, K, weights, bounds, opts):
    """Multi-start continuous search at one ``K`` followed by ``Q`` rounding."""
    if opts.mode == "simultaneous":
        return _search_K_simultaneous(params, K, weights, bounds, opts)
    obj, best, records = _continuous_search(params, K, weights, bounds, opts)
    if best[1] is None:
        return None, records
    st, more = _round_Q(params, K, weights, bounds, opts, obj, best[1])
    return st, records + more


def _screen_K(params, K, weights, bounds, opts):
    """Short single-start search used to rank ``K`` values."""
    quick = replace(opts, n_starts=1, max_iter=opts.screen_iter)
    _, best, records = _continuous_search(params, K, weights, bounds, quick, phase="screen")
    return best[0], records


def _map(fn, arglist, workers):
    if workers > 1 and len(arglist) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, *zip(*arglist)))
    return [fn(*a) for a in arglist]


def optimize_design(
    params: SystemParams,
    bounds: OptimizerBounds | None = None,
    scheme: Scheme | str | PriorityWeights = Scheme.PW3,
    options: OptimizerOptions | None = None,
    workers: int = 1,
) -> OptimizationResult:
    """Minimise the cost per rider over the station design.

    For each ``K`` in range, every start runs SLSQP (finite-difference
    gradients) over the random-location total, continuous ``Q`` and the
    promotions; the inner steady state is re-solved at every evaluation and
    ``H, R`` are set to their best values for the resulting flows. ``Q`` is
    then fixed to its floor and ceiling, the rest re-optimised, and the better
    integral design kept. The best feasible design over all ``K`` is returned.

    With ``options.screen_top`` set, every ``K`` first gets one short search
    from the reference start and only the best ``screen_top`` values get the
    full multi-start treatment.
    """
    bounds = bounds or OptimizerBounds()
    opts = options or OptimizerOptions()
    weights = scheme if isinstance(scheme, PriorityWeights) else make_priority_weights(scheme, params.B, params.L_max)
    Ks = list(opts.K_values) if opts.K_values is not None else list(bounds.K_range(params.phi))
    if not Ks:
        raise InfeasibleError("no integer K satisfies the spacing bounds")
    screen_records = []
    if opts.screen_top is not None and len(Ks) > opts.screen_top:
        screened = _map(_screen_K, [(params, K, weights, bounds, opts) for K in Ks], workers)
        screen_records = [r for _, recs in screened for r in recs]
        order = sorted(range(len(Ks)), key=lambda i: (screened[i][0], Ks[i]))
        Ks = sorted(Ks[i] for i in order[: opts.screen_top])
    outs = _map(_search_K, [(params, K, weights, bounds, opts) for K in Ks], workers)
    records = screen_records + [r for _, recs in outs for r in recs]
    best = None
    for st, _ in outs:
        if st is None:
            continue
        if validate(params, st.design, bounds, integral=True, tol=1e-8):
            continue
        if best is None or cost_breakdown(params, st).Z < cost_breakdown(params, best).Z:
            best = st
    if best is None:
        raise InfeasibleError("no feasible design found in bounds")
    return OptimizationResult(best.design, cost_breakdown(params, best), best, records)


# ---------------------------------------------------------------------------
# simultaneous formulation: counts are decision variables, balances are
# equality constraints


def _search_K_simultaneous(params, K, weights, bounds, opts):
    B = params.B
    k = min(opts.n_promoted, B)
    cap = promotion_cap(params, K)
    scale = params.demand
    bil = _Bilevel(params, K, weights, bounds, opts)  # supplies feasible starts
    records = []
    best = (math.inf, None)

    def split(z):
        n = z[: 2 * B + 1] * scale
        Q = bounds.Q_min + z[2 * B + 1] * (bounds.Q_max - bounds.Q_min)
        pi = np.zeros(B)
        pi[:k] = np.clip(z[2 * B + 2:], 0, 1) * cap
        n_bs, n_br = _unpack(params, np.maximum(n, 0.0), False)
        return DesignVariables(n_bs, n_br, K, Q, pi, 1.0, 20.0, weights)

    def objective(z):
        try:
            d = split(z)
            fl = compute_rates(params, d)
            st = with_truck_plan(params, close_fleet(params, d, fl, rel_tol=1e9), bounds)
            return cost_breakdown(params, st).Z
        except _FAILURES:
            return PENALTY

    def balances(z):
        d = split(z)
        sys = _System(params, d, float(np.sum(d.n_br)), None)
        try:
            return sys.residual(_pack(d.n_bs, d.n_br, False))[:-1]
        except _FAILURES:
            return np.full(2 * B, 1.0)

    def capacity(z):
        d = split(z)
        return (K * K * d.Q - np.sum(d.n_bs)) / scale

    for i, v0 in enumerate(starting_points(bil.dim, opts.n_starts, opts.seed, K, bil.reference())):
        bil.solver.reset()
        v0 = _repair_start(bil, v0)
        Z0, st0 = bil.evaluate(v0)
        if st0 is None:
            continue
        z0 = np.concatenate([_pack(st0.design.n_bs, st0.design.n_br, False) / scale, v0[1:2], v0[2:]])
        res = optimize.minimize(
            objective, z0, method="SLSQP",
            bounds=[(0, None)] * (2 * B + 1) + [(0, 1)] * (1 + k),
            constraints=[{"type": "eq", "fun": balances}, {"type": "ineq", "fun": capacity}],
            options={"maxiter": opts.max_iter * 3, "ftol": opts.ftol, "eps": opts.fd_step},
        )
        d = split(res.x)
        # polish onto an exact steady state at the found design
        try:
            st = solve_steady_state(params, d, total_n_br=float(np.sum(d.n_br)),
                                    init=_pack(d.n_bs, d.n_br, False))
            st = with_truck_plan(params, st, bounds)
            Z = cost_breakdown(params, st).Z
        except _FAILURES:
            st, Z = None, PENALTY
        v = bil.encode(max(float(np.sum(d.n_br)), opts.total_min), d.Q, d.pi)
        records.append(_record(bil, K, i, "continuous", Z0, v, Z, st, res))
        if st is not None and Z < best[0]:
            best = (Z, v)
    if best[1] is None:
        return None, records
    st, more = _round_Q(params, K, weights, bounds, opts, bil, best[1])
    return st, records + more


# ---------------------------------------------------------------------------
# benchmarks


def benchmark_depot_only(params: SystemParams, bounds: OptimizerBounds | None = None,
                         options: OptimizerOptions | None = None) -> tuple[DesignVariables, CostBreakdown]:
    """Best station-free system: only the random-location total, ``H`` and
    ``R`` are free; charging happens at the depot."""
    bounds = bounds or OptimizerBounds()
    opts = options or OptimizerOptions()
    B = params.B
    weights = make_priority_weights(Scheme.PW1, B, params.L_max)
    base = DesignVariables(np.zeros(B + 1), np.zeros(B + 1), 0, 0.0, np.zeros(B), 1.0, 20.0, weights)
    solver = WarmSolver(params)
    lo, hi = math.log(opts.total_min), math.log(opts.total_max or 10 * params.demand + 100)

    def f(logT):
        try:
            st = with_truck_plan(params, solver.solve(base, total_n_br=math.exp(logT)), bounds)
            return cost_breakdown(params, st).Z, st
        except _FAILURES:
            solver.reset()
            return PENALTY, None

    grid = np.linspace(lo, hi, 41)
    vals = [f(g)[0] for g in grid]
    j = int(np.argmin(vals))
    if vals[j] >= PENALTY:
        raise InfeasibleError("depot-only system has no steady state in bounds")
    a, b = grid[max(j - 1, 0)], grid[min(j + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(lambda t: f(t)[0], bounds=(a, b), method="bounded", options={"xatol": 1e-9})
    t_best = res.x if res.fun <= vals[j] else grid[j]
    Z, st = f(t_best)
    return st.design, cost_breakdown(params, st)
