"""Exogenous parameters, decision variables and their validation.

Index conventions used across the package:

* SoC levels ``b`` run over ``0..B``; per-SoC arrays have length ``B + 1``.
* Trip types ``bhat`` run over ``1..L_max``; per-type arrays have length
  ``L_max`` and are indexed with ``bhat - 1``.
* Promotions are indexed by post-trip SoC ``0..B-1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np


class ChargingProfileKind(str, Enum):
    LINEAR = "linear"
    PIECEWISE = "piecewise"


class Scheme(str, Enum):
    PW1 = "PW1"
    PW2 = "PW2"
    PW3 = "PW3"


def _frozen(arr) -> np.ndarray:
    a = np.array(arr, dtype=float)
    a.setflags(write=False)
    return a


def charging_profile(kind: ChargingProfileKind | str, B: int, total: float) -> tuple[float, ...]:
    """Per-level charge durations ``tau_0..tau_{B-1}`` summing to ``total``.

    ``PIECEWISE`` charges at rate ``r`` up to 80% of capacity and ``r/2``
    above it; ``r`` is solved so that the durations add up to ``total``.
    """
    kind = ChargingProfileKind(kind)
    if B < 1 or total <= 0:
        raise ValueError("need B >= 1 and total > 0")
    if kind is ChargingProfileKind.LINEAR:
        return tuple(total / B for _ in range(B))
    knee = 0.8 * B
    # time in units of 1/r for each level: 1 below the knee, 2 above it
    units = []
    for b in range(B):
        below = min(max(knee - b, 0.0), 1.0)
        units.append(below + 2.0 * (1.0 - below))
    scale = total / math.fsum(units)
    return tuple(u * scale for u in units)


@dataclass(frozen=True)
class SystemParams:
    """Exogenous constants (distance unit du, time unit tu)."""

    phi: float  # region side length
    lam: float  # demand density, trips/(tu du^2)
    B: int  # battery capacity in levels, one level = 1 du of range
    L_max: int  # maximum trip length
    v_s: float
    v_w: float
    v_t: float
    gamma: float  # scooter cost per tu
    beta: float  # value of time per tu
    omega1: float  # station cost per tu
    omega2: float  # charger cost per tu
    kappa: float  # truck cost per du
    l_f: float  # depot distance from region center
    tau: tuple[float, ...]  # per-level station/depot charge durations

    def __post_init__(self):
        object.__setattr__(self, "tau", tuple(float(t) for t in self.tau))
        problems = params_violations(self)
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def demand(self) -> float:
        """Total trip rate over the region, trips/tu."""
        return self.lam * self.phi**2

    @property
    def total_charge_time(self) -> float:
        return math.fsum(self.tau)

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)


def params_violations(p: SystemParams) -> list[str]:
    out = []
    for name in ("phi", "lam", "v_s", "v_w", "v_t", "gamma", "beta", "omega1", "omega2", "kappa", "l_f"):
        if not getattr(p, name) > 0:
            out.append(f"params: {name} must be strictly positive")
    if int(p.B) != p.B or p.B < 1:
        out.append("params: B must be a positive integer")
    if int(p.L_max) != p.L_max or p.L_max < 1:
        out.append("params: L_max must be a positive integer")
    elif p.L_max > p.B:
        out.append("params: L_max must not exceed B")
    if len(p.tau) != p.B:
        out.append(f"params: tau must have exactly B={p.B} entries")
    elif any(not t > 0 for t in p.tau):
        out.append("params: tau entries must be strictly positive")
    return out


def table1_params(
    lam: float = 1.0,
    phi: float = 10.0,
    B: int = 8,
    L_max: int = 3,
    profile: ChargingProfileKind | str = ChargingProfileKind.PIECEWISE,
    total_charge_time: float | None = None,
    **overrides,
) -> SystemParams:
    """Default parameter set (km, hours). The depot sits ``2 * phi`` away.

    ``total_charge_time`` defaults to ``B`` hours (8 h for B=8).
    """
    total = float(B) if total_charge_time is None else total_charge_time
    values = dict(
        phi=phi, lam=lam, B=B, L_max=L_max,
        v_s=15.0, v_w=3.0, v_t=20.0,
        gamma=1.0, beta=20.0, omega1=0.3, omega2=0.06, kappa=4.0,
        l_f=2.0 * phi,
        tau=charging_profile(profile, B, total),
    )
    values.update(overrides)
    return SystemParams(**values)


@dataclass(frozen=True, eq=False)
class PriorityWeights:
    """Station priority weights, ``theta[bhat - 1, b]``."""

    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", _frozen(self.theta))
        if self.theta.ndim != 2:
            raise ValueError("theta must be a (L_max, B+1) matrix")

    @property
    def L_max(self) -> int:
        return self.theta.shape[0]

    @property
    def B(self) -> int:
        return self.theta.shape[1] - 1

    def row(self, bhat: int) -> np.ndarray:
        return self.theta[bhat - 1]

    def violations(self) -> list[str]:
        out = []
        if np.any(self.theta < 0):
            out.append("theta: weights must be nonnegative")
        for bhat in range(1, self.L_max + 1):
            row = self.row(bhat)
            if np.any(row[:bhat] != 0):
                out.append(f"theta: row {bhat} gives weight to unsuitable SoC < {bhat}")
            if not row.sum() > 0:
                out.append(f"theta: row {bhat} has no positive weight")
        return out


def make_priority_weights(scheme: Scheme | str, B: int, L_max: int) -> PriorityWeights:
    """Build one of the three fixed weighting schemes.

    PW1 is uniform over suitable SoC, PW2 grows linearly with surplus charge
    and PW3 blocks SoC 1 and strongly favours near-full batteries
    (``b >= floor(0.8 B)``).
    """
    try:
        if not isinstance(scheme, Scheme):
            scheme = Scheme(str(scheme).upper().replace("-", ""))
    except ValueError:
        raise ValueError(f"unknown priority scheme {scheme!r}") from None
    if not B >= L_max >= 1:
        raise ValueError("need B >= L_max >= 1")
    theta = np.zeros((L_max, B + 1))
    knee = math.floor(0.8 * B)
    for bhat in range(1, L_max + 1):
        for b in range(bhat, B + 1):
            surplus = b - bhat + 1
            if scheme is Scheme.PW1:
                theta[bhat - 1, b] = 1.0
            elif scheme is Scheme.PW2:
                theta[bhat - 1, b] = surplus
            elif b == 1:
                theta[bhat - 1, b] = 0.0
            elif b < knee:
                theta[bhat - 1, b] = surplus
            else:
                theta[bhat - 1, b] = 10.0**surplus
    return PriorityWeights(theta)


def trip_type_of_length(l: float, L_max: int) -> int:
    """Battery levels consumed by a trip of length ``l``: ``bhat - 1 < l <= bhat``."""
    if not 0 < l <= L_max:
        raise ValueError(f"trip length {l} outside (0, {L_max}]")
    return max(1, math.ceil(l))


@dataclass(frozen=True)
class OptimizerBounds:
    """Box bounds of the design problem; the promotion cap is ``beta * S / v_w``."""

    S_min: float = 0.5
    S_max: float = 5.0
    Q_min: float = 5
    Q_max: float = 20
    H_min: float = 1.0 / 6.0
    H_max: float = 12.0
    R_min: float = 5
    R_max: float = 50

    def __post_init__(self):
        for lo, hi in (("S_min", "S_max"), ("Q_min", "Q_max"), ("H_min", "H_max"), ("R_min", "R_max")):
            if getattr(self, lo) > getattr(self, hi):
                raise ValueError(f"{lo} > {hi}")
        if self.S_min <= 0 or self.H_min <= 0 or self.R_min <= 0:
            raise ValueError("lower bounds on S, H and R must be positive")

    def K_range(self, phi: float) -> range:
        lo = math.ceil(phi / self.S_max - 1e-9)
        hi = math.floor(phi / self.S_min + 1e-9)
        return range(max(lo, 1), hi + 1)


@dataclass(frozen=True, eq=False)
class DesignVariables:
    """Decision vector of the design problem.

    ``n_bs`` and ``n_br`` have length ``B + 1``; ``n_br[0]`` is not a
    decision (the SoC-0 random count comes out of the truck closure) and is
    kept at zero. ``K = 0`` encodes the station-free depot-only system.
    """

    n_bs: np.ndarray
    n_br: np.ndarray
    K: int
    Q: float
    pi: np.ndarray
    H: float
    R: float
    weights: PriorityWeights

    def __post_init__(self):
        for name in ("n_bs", "n_br", "pi"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def B(self) -> int:
        return len(self.n_bs) - 1

    @property
    def depot_only(self) -> bool:
        return self.K == 0

    def spacing(self, phi: float) -> float:
        return phi / self.K if self.K > 0 else math.inf

    def with_(self, **changes) -> "DesignVariables":
        return replace(self, **changes)


def promotion_cap(params: SystemParams, K: int) -> float:
    """Largest useful promotion: the walk from a station cell corner, ``beta*S/v_w``."""
    return params.beta * (params.phi / K) / params.v_w


def validate(
    params: SystemParams,
    design: DesignVariables,
    bounds: OptimizerBounds | None = None,
    integral: bool = True,
    tol: float = 1e-9,
) -> list[str]:
    """List every violated invariant or design constraint; empty means feasible.

    Entries are short human-readable messages. ``integral=False`` skips the
    integrality of ``Q`` for continuous relaxations.
    """
    bounds = bounds or OptimizerBounds()
    out = params_violations(params)
    B = params.B
    if len(design.n_bs) != B + 1 or len(design.n_br) != B + 1:
        out.append(f"shape: n_bs and n_br must have B+1={B + 1} entries")
        return out
    if len(design.pi) != B:
        out.append(f"shape: pi must have B={B} entries")
        return out
    w = design.weights
    if w.theta.shape != (params.L_max, B + 1):
        out.append("shape: theta must be (L_max, B+1)")
    else:
        out.extend(w.violations())

    if np.any(design.n_bs < -tol) or np.any(design.n_br < -tol):
        out.append("idle counts must be nonnegative")
    if design.n_br[0] != 0:
        out.append("n_br[0] is a closure output and must be left at zero")

    if design.depot_only:
        if np.any(design.n_bs != 0) or np.any(design.pi != 0) or design.Q != 0:
            out.append("depot-only design must have no station scooters, chargers or promotions")
    else:
        cap = promotion_cap(params, design.K)
        if np.any(design.pi < -tol):
            out.append("promotion must be nonnegative")
        if np.any(design.pi > cap + tol):
            out.append("promotion exceeds walking-disutility cap")
        if design.n_bs.sum() > design.K**2 * design.Q + tol:
            out.append("station capacity exceeded")
        if design.K not in bounds.K_range(params.phi):
            out.append("station spacing outside [S_min, S_max]")
        if not bounds.Q_min - tol <= design.Q <= bounds.Q_max + tol:
            out.append("chargers per station outside [Q_min, Q_max]")
        if int(design.K) != design.K or design.K < 1:
            out.append("K must be a positive integer")
        if integral and (abs(design.Q - round(design.Q)) > tol or design.Q < 1):
            out.append("Q must be a positive integer")
    if not bounds.H_min - tol <= design.H <= bounds.H_max + tol:
        out.append("headway outside [H_min, H_max]")
    if not bounds.R_min - tol <= design.R <= bounds.R_max + tol:
        out.append("truck load outside [R_min, R_max]")
    if design.H <= 0 or design.R <= 0:
        out.append("headway and truck load must be positive")
    return out


def fixed_design_promotions(params: SystemParams, K: int) -> np.ndarray:
    """Promotions of the verification design: acceptance 0.5 for SoC 0, 0.25 for SoC 1."""
    pi = np.zeros(params.B)
    cap = promotion_cap(params, K)
    pi[0] = cap / 2.0
    if params.B > 1:
        pi[1] = math.sqrt(2.0) * cap / 4.0
    return pi
