"""Matching probabilities between riders, idle scooters and stations.

Counts may be real-valued (the design problem relaxes them). Binomial sums
are then evaluated through the regularised incomplete beta function, the
continuous extension of the binomial CDF that is exact at integers and
monotone in the count.
A non-integer charger count ``Q`` is handled by linear interpolation between
``floor(Q)`` and ``ceil(Q)``.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import betainc, roots_legendre, xlog1py

QUAD_EPSREL = 1e-12
QUAD_EPSABS = 1e-15
PICKUP_CONST = 0.63  # nearest-of-N rectilinear distance factor: 0.63 * phi / sqrt(N)
# Fixed Gauss-Legendre rule used while the integrand is smooth on the grid
# (N / K^2 small enough); within ~1e-10 of adaptive quad there, and free of
# the small jumps adaptive subdivision puts into finite differences.
_GL_X, _GL_W = roots_legendre(64)
_GL_MAX_DENSITY = 1000.0


class CapacityError(ValueError):
    """More scooters at stations than chargers in total."""


class NoSupplyError(ValueError):
    """A trip type has neither station nor random-location supply."""


def _binom_cdf(n: float, k: int, p: float) -> float:
    """``P(X <= k)`` for ``X ~ Binomial(n, p)``, continued to real ``n``
    through the regularised incomplete beta function."""
    if k < 0:
        return 0.0
    if n <= k:
        return 1.0
    return float(betainc(n - k, k + 1.0, 1.0 - p))


def _binom_pmf_sum(n_pick: float, n_total: float, K: int, lo: float, hi: int) -> float:
    """``sum_{q=lo}^{hi} C(n_pick, q) p^q (1-p)^(n_total-q)`` with ``p = 1/K^2``.

    The sum is ``(1-p)^(n_total - n_pick)`` times a binomial window
    probability; a real ``n_pick`` goes through the continuous binomial CDF
    and a real lower limit ``lo`` interpolates linearly between integers.
    """
    p = 1.0 / (K * K)
    lo = max(lo, 0.0)
    q_lo = math.ceil(lo - 1e-9)
    below = _binom_cdf(n_pick, q_lo - 1, p)
    w_lo = q_lo - lo
    if w_lo > 1e-9:
        below = (1.0 - w_lo) * below + w_lo * _binom_cdf(n_pick, q_lo - 2, p)
    window = _binom_cdf(n_pick, hi, p) - below
    if window <= 0.0:
        return 0.0
    return window * math.exp(xlog1py(n_total - n_pick, -p))


def _lower_limit(N_s: float, K: int, Q: int) -> float:
    return max(0.0, N_s - (K * K - 1) * Q)


def _check_capacity(N_s: float, K: int, Q: float):
    if N_s > K * K * Q * (1 + 1e-12) + 1e-9:
        raise CapacityError(f"{N_s:g} scooters exceed {K}^2 x {Q:g} chargers")


def _over_Q(fn, Q: float) -> float:
    lo = math.floor(Q + 1e-12)
    w = Q - lo
    if w < 1e-12:
        return fn(lo)
    return (1.0 - w) * fn(lo) + w * fn(lo + 1)


def p_c1(N_s: float, N_suitable: float, K: int, Q: float) -> float:
    """Probability that the rider's nearest station holds a suitable scooter.

    Scooters are spread binomially over the ``K^2`` stations; the occupancy of
    the nearest station is limited to ``[max(0, N_s - (K^2-1) Q), Q]``.
    """
    if N_s < 0 or N_suitable < 0 or N_suitable > N_s * (1 + 1e-12) + 1e-12:
        raise ValueError("need 0 <= N_suitable <= N_s")
    if K <= 0 or N_suitable <= 0:
        return 0.0
    _check_capacity(N_s, K, Q)
    unsuitable = max(N_s - N_suitable, 0.0)

    def at(Qi: int) -> float:
        return 1.0 - _binom_pmf_sum(unsuitable, N_s, K, _lower_limit(N_s, K, Qi), Qi)

    return min(max(_over_Q(at, Q), 0.0), 1.0)


def p_q(N_s: float, K: int, Q: float) -> float:
    """Probability that the station nearest a destination has a vacant charger."""
    if N_s < 0:
        raise ValueError("N_s must be nonnegative")
    if K <= 0 or Q <= 0:
        return 0.0
    _check_capacity(N_s, K, Q)

    def at(Qi: int) -> float:
        return _binom_pmf_sum(N_s, N_s, K, _lower_limit(N_s, K, Qi), Qi - 1)

    return min(max(_over_Q(at, Q), 0.0), 1.0)


def p_pi(pi_b: float, beta: float, S: float, v_w: float) -> float:
    """Probability that promotion ``pi_b`` beats the walk from the
    destination-nearest station (uniform destination in a diamond cell)."""
    cap = beta * S / v_w
    if pi_b < -1e-12 or pi_b > cap * (1 + 1e-12) + 1e-12:
        raise ValueError(f"promotion {pi_b:g} outside [0, {cap:g}]")
    x = min(max(pi_b / cap, 0.0), 1.0)
    if x <= 0.5:
        return 2.0 * x * x
    return 1.0 - 2.0 * (1.0 - x) ** 2


def _survival_base(t, N: float, K: int):
    # (1 - 2 t^2 / K^2)^N in log form; t is distance in units of S
    base = np.maximum(-2.0 * np.square(t) / (K * K), -1.0)
    with np.errstate(divide="ignore"):
        return np.exp(N * np.log1p(base))


def _tri_pdf(t):
    return np.where(t <= 0.5, 4.0 * t, 4.0 * (1.0 - t))


def _tri_sf(t):
    return np.where(t <= 0.5, 1.0 - 2.0 * t * t, 2.0 * (1.0 - t) ** 2)


def _tri_integral(N: float, K: int, weight) -> float:
    """``int_0^1 (1 - 2 t^2 / K^2)^N weight(t) dt`` split at the kink t = 1/2."""
    if K >= 2 and N <= _GL_MAX_DENSITY * K * K:
        total = 0.0
        for a, b in ((0.0, 0.5), (0.5, 1.0)):
            t = 0.5 * (b - a) * _GL_X + 0.5 * (a + b)
            total += 0.5 * (b - a) * float(np.dot(_GL_W, _survival_base(t, N, K) * weight(t)))
        return total
    f = lambda t: float(_survival_base(t, N, K) * weight(t))
    a, _ = integrate.quad(f, 0.0, 0.5, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=200)
    b, _ = integrate.quad(f, 0.5, 1.0, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=200)
    return a + b


@lru_cache(maxsize=65536)
def _p_c2_quad(N: float, K: int) -> float:
    return _tri_integral(N, K, _tri_pdf)


def p_c2(N_r: float, K: int) -> float:
    """Probability that no suitable random scooter is closer than the nearest
    station, integrating over the triangular station distance."""
    if N_r < 0:
        raise ValueError("N_r must be nonnegative")
    if K <= 0:
        return 0.0
    if N_r == 0:
        return 1.0
    return min(max(_p_c2_quad(float(N_r), int(K)), 0.0), 1.0)


def p_c2_closed_form(N_r: int, K: int) -> float:
    """Exact binomial-sum evaluation of :func:`p_c2` for integer ``N_r``.

    Derived by splitting the triangular density at ``S/2``: the ``4l/S^2``
    pieces integrate in closed form and the ``4/S`` piece is expanded
    binomially. Alternating terms cancel badly for large ``N_r``; use only as
    a cross-check.
    """
    N = int(N_r)
    k2 = float(K * K)
    head = k2 / (N + 1) * (1 - 2 * (1 - 1 / (2 * k2)) ** (N + 1) + (1 - 2 / k2) ** (N + 1))
    tail = math.fsum(
        math.comb(N, i) * (2 - 0.25**i) / (i + 0.5) * (-2 / k2) ** i for i in range(N + 1)
    )
    return head + tail


def p_c2_closed_form_published(N_r: int, K: int) -> float:
    """The published closed form, kept verbatim: its leading coefficient is
    ``2K^2`` where the integral gives ``K^2``, so it returns 0 at ``N_r = 0``."""
    N = int(N_r)
    k2 = float(K * K)
    head = 2 * k2 / (N + 1) * (1 - 2 * (1 - 1 / (2 * k2)) ** (N + 1) + (1 - 2 / k2) ** (N + 1))
    tail = math.fsum(
        math.comb(N, i) * (2 - 0.25**i) / (i + 0.5) * (-2 / k2) ** i for i in range(N + 1)
    )
    return head + tail


@lru_cache(maxsize=65536)
def _pickup_c1_unit(N: float, K: int) -> float:
    # E[min(l, nearest random)] / S. Integrating the inner variable first turns
    # the double integral into int_0^1 P(random > x) P(l > x) dx.
    return _tri_integral(N, K, _tri_sf)


def pickup_distance_given_c1(N_r: float, K: int, S: float) -> float:
    """Expected pickup distance when the nearest station has a suitable scooter."""
    if N_r < 0:
        raise ValueError("N_r must be nonnegative")
    if N_r == 0:
        return S / 2.0
    return S * _pickup_c1_unit(float(N_r), int(K))


def pickup_distance_given_c1_dblquad(N_r: float, K: int, S: float) -> float:
    """Same quantity by literal 2-D quadrature over (station distance, pickup distance)."""
    phi = K * S

    def inner(x, l):
        return (1.0 - 2.0 * x * x / phi**2) ** N_r * (4 * l / S**2 if l <= S / 2 else 4 * (S - l) / S**2)

    a, _ = integrate.dblquad(inner, 0, S / 2, 0, lambda l: l, epsabs=1e-14, epsrel=1e-12)
    b, _ = integrate.dblquad(inner, S / 2, S, 0, lambda l: l, epsabs=1e-14, epsrel=1e-12)
    return a + b


def pickup_distance_given_c1_closed_form(N_r: int, K: int, S: float) -> float:
    """Binomial-sum evaluation for integer ``N_r`` (cross-check only)."""
    N = int(N_r)
    terms = [
        math.comb(N, i) * (-1) ** i * (2.0 ** (i + 2) - 2.0**-i) * S
        / ((2 * i + 1) * (2 * i + 2) * (2 * i + 3) * float(K) ** (2 * i))
        for i in range(N + 1)
    ]
    return math.fsum(terms)


def expected_pickup_distance(N_r: float, K: int, S: float, phi: float, p_c1_value: float) -> float:
    """Mean walk to the booked scooter for one trip type.

    With probability ``p_c1_value`` the walk is capped by the nearest station;
    otherwise it is the nearest-of-``N_r`` distance ``0.63 phi / sqrt(N_r)``.
    """
    if N_r <= 0:
        if p_c1_value <= 0:
            raise NoSupplyError("no suitable scooter at stations or random locations")
        if p_c1_value >= 1:
            return S / 2.0
        return math.inf
    far = PICKUP_CONST * phi / math.sqrt(N_r)
    if p_c1_value <= 0 or K <= 0:
        return far
    return p_c1_value * pickup_distance_given_c1(N_r, K, S) + (1.0 - p_c1_value) * far
