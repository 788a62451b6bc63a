"""Scalar stochastic delay equation ``dx = -a x(t - tau) dt + dw``.

Closed-form stationary variance, its derivatives, the minimum-variance gain
and an independent route to the variance through the fundamental solution
of the deterministic delay equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConvergenceError, InvalidPlantError, UnstablePlantError

HALF_PI = 0.5 * math.pi

# a*tau must stay this far below pi/2 before cos(a*tau) is trusted.
BOUNDARY_GUARD = 1e-9

BETA_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ScalarDelayPlant:
    """Gain ``a`` (1/time) and delay ``tau`` (time) of the scalar delay SDE."""

    a: float
    tau: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.tau)):
            raise InvalidPlantError(f"non-finite plant parameters a={self.a}, tau={self.tau}")
        if self.tau <= 0:
            raise InvalidPlantError(f"delay must be strictly positive, got tau={self.tau}")

    @property
    def a_tau(self) -> float:
        return self.a * self.tau

    @property
    def stability_bound(self) -> float:
        """Open upper limit ``pi / (2 tau)`` on the gain."""
        return HALF_PI / self.tau


@dataclass(frozen=True)
class ScalarOptimum:
    tau: float
    beta_star: float
    lambda_star: float
    sigma2_star: float


def is_stable(plant: ScalarDelayPlant) -> bool:
    """True iff ``0 < a < pi/(2 tau)``; both ends are excluded."""
    return 0.0 < plant.a < plant.stability_bound


def _check_stationary(plant: ScalarDelayPlant) -> None:
    if not is_stable(plant) or plant.a_tau > HALF_PI - BOUNDARY_GUARD:
        raise UnstablePlantError(
            f"a={plant.a:.10g} outside (0, pi/(2 tau)) = (0, {plant.stability_bound:.10g}) "
            f"for tau={plant.tau:.10g}; no stationary solution"
        )


def _variance(lam, tau):
    x = lam * tau
    return (1.0 + np.sin(x)) / (2.0 * lam * np.cos(x))


def _variance_derivative(lam, tau):
    x = lam * tau
    s, c = np.sin(x), np.cos(x)
    return (x - c + x * s - c * s) / (2.0 * lam**2 * c**2)


def _variance_second_derivative(lam, tau):
    x = lam * tau
    s, c = np.sin(x), np.cos(x)
    num = x - c + x * s - c * s
    dnum = tau * (1.0 + 2.0 * s - np.cos(2.0 * x)) + tau * x * c
    return (dnum * lam**2 * c**2 + num * (2.0 * lam**2 * tau * s - 2.0 * lam * c) * c) / (
        2.0 * lam**4 * c**4
    )


def steady_state_variance(plant: ScalarDelayPlant) -> float:
    """Stationary variance ``(1 + sin(a tau)) / (2 a cos(a tau))``.

    Raises:
        UnstablePlantError: if the gain is outside the stability interval,
            or within ``BOUNDARY_GUARD`` of its upper end in units of ``a tau``.
    """
    _check_stationary(plant)
    return float(_variance(plant.a, plant.tau))


def delay_free_variance(a: float) -> float:
    """Ornstein-Uhlenbeck variance ``1/(2a)``: the ``tau -> 0`` limit of
    :func:`steady_state_variance`. A zero delay is not a valid plant."""
    if a <= 0:
        raise UnstablePlantError(f"delay-free limit needs a > 0, got {a}")
    return 1.0 / (2.0 * a)


def variance_derivative(plant: ScalarDelayPlant) -> float:
    """Derivative of the stationary variance with respect to the gain."""
    _check_stationary(plant)
    return float(_variance_derivative(plant.a, plant.tau))


def variance_second_derivative(plant: ScalarDelayPlant) -> float:
    """Second derivative with respect to the gain; positive on the whole
    stability interval."""
    _check_stationary(plant)
    return float(_variance_second_derivative(plant.a, plant.tau))


def _polish_ulp(beta: float) -> float:
    # Newton stops wherever rounding lets |h| drop below tol; the neighbouring
    # doubles may be closer to the true root.
    cands = (math.nextafter(beta, 0.0), beta, math.nextafter(beta, 2.0))
    return min(cands, key=lambda b: (abs(b - math.cos(b)), b))


def solve_beta_star(tolerance: float = BETA_TOLERANCE) -> float:
    """Root of ``beta = cos(beta)`` on (0, pi/2).

    Newton iteration from 0.75, falling back to bisection if Newton stalls
    or leaves the interval.
    """
    if not tolerance > 0:
        raise ValueError(f"tolerance must be positive, got {tolerance}")
    beta = 0.75
    for _ in range(50):
        h = beta - math.cos(beta)
        if abs(h) <= tolerance:
            return _polish_ulp(beta)
        step = h / (1.0 + math.sin(beta))
        beta_new = beta - step
        if not 0.0 < beta_new < HALF_PI or beta_new == beta:
            break
        beta = beta_new
    if abs(beta - math.cos(beta)) <= tolerance and 0.0 < beta < HALF_PI:
        return beta
    lo, hi = 0.0, HALF_PI
    while hi - lo > 0:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if mid - math.cos(mid) < 0:
            lo = mid
        else:
            hi = mid
        if abs(mid - math.cos(mid)) <= tolerance:
            return mid
    return lo if abs(lo - math.cos(lo)) < abs(hi - math.cos(hi)) else hi


@lru_cache(maxsize=None)
def beta_star() -> float:
    return solve_beta_star(BETA_TOLERANCE)


def optimal_scalar_gain(tau: float) -> ScalarOptimum:
    """Minimum-variance delayed feedback gain for delay ``tau``.

    The optimum is ``lambda* = beta*/tau`` with minimum variance
    ``(1 + sin beta*) / (2 cos^2 beta*) * tau``; both scale with ``tau``
    only, so one root solve serves every delay.
    """
    if not (math.isfinite(tau) and tau > 0):
        raise InvalidPlantError(f"delay must be strictly positive, got tau={tau}")
    b = beta_star()
    return ScalarOptimum(
        tau=tau,
        beta_star=b,
        lambda_star=b / tau,
        sigma2_star=(1.0 + math.sin(b)) / (2.0 * math.cos(b) ** 2) * tau,
    )


@dataclass
class FundamentalSolution:
    """Piecewise-polynomial fundamental solution of ``x' = -a x(t - tau)``.

    ``x(t) = 0`` for ``t < 0`` and ``x(0) = 1``. On segment ``m``, i.e.
    ``t = (m + u) tau`` with ``u`` in [0, 1], the solution is the polynomial
    ``sum_j coeffs[m][j] u**j`` of degree ``m``, where
    ``coeffs[m][j] = (-a tau)**j / j! * x((m - j) tau)``. Coefficients whose
    factorial factor underflows to zero are dropped.

    Segments are generated on demand and cached.
    """

    plant: ScalarDelayPlant
    _factors: np.ndarray = field(init=False, repr=False)
    _nodes: list = field(init=False, repr=False)

    def __post_init__(self):
        at = self.plant.a_tau
        factors = [1.0]
        while True:
            nxt = factors[-1] * (-at) / len(factors)
            if nxt == 0.0 or len(factors) > 4096:
                break
            factors.append(nxt)
        self._factors = np.array(factors)
        # _nodes[m] = x(m tau)
        self._nodes = [1.0]

    @property
    def max_degree(self) -> int:
        return len(self._factors) - 1

    def _extend_nodes(self, m: int) -> None:
        f = self._factors
        while len(self._nodes) <= m:
            k = len(self._nodes)
            d = min(k - 1, len(f) - 1)
            past = np.array(self._nodes[k - 1 - d : k][::-1])
            self._nodes.append(float(f[: d + 1] @ past))

    def coefficients(self, m: int) -> np.ndarray:
        """Polynomial coefficients of segment ``m`` in the local variable ``u``."""
        if m < 0:
            raise ValueError("segment index must be non-negative")
        self._extend_nodes(m)
        d = min(m, self.max_degree)
        past = np.array(self._nodes[m - d : m + 1][::-1])
        return self._factors[: d + 1] * past

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        pos = t >= 0
        if np.any(pos):
            scaled = t[pos] / self.plant.tau
            seg = np.floor(scaled).astype(int)
            u = scaled - seg
            vals = np.empty_like(u)
            for m in np.unique(seg):
                sel = seg == m
                vals[sel] = np.polynomial.polynomial.polyval(u[sel], self.coefficients(int(m)))
            out[pos] = vals
        return out if out.ndim else float(out)


def fundamental_solution_eval(plant: ScalarDelayPlant, t):
    """Value of the fundamental solution at time(s) ``t``.

    Equals ``sum_{m=0}^{floor(t/tau)} (-a)^m (t - m tau)^m / m!`` for
    ``t >= 0`` and 0 for ``t < 0``.
    """
    return FundamentalSolution(plant)(t)


@lru_cache(maxsize=8)
def _hilbert(size: int) -> np.ndarray:
    i = np.arange(size)
    return 1.0 / (i[:, None] + i[None, :] + 1.0)


_PROBE_U = np.linspace(0.0, 1.0, 65)


def fundamental_variance_integral(
    plant: ScalarDelayPlant,
    rel_tol: float = 1e-6,
    max_segments: int = 10_000,
    window: int = 8,
) -> float:
    """``int_0^inf x_d(s)^2 ds`` by exact per-segment polynomial integration.

    Integration stops once a geometric bound on the remaining tail drops
    below ``rel_tol`` times the accumulated value. The per-segment decay
    rate is estimated from the envelope of ``|x_d|`` over the last two
    windows of ``window`` segments.

    Raises:
        UnstablePlantError: for a gain outside the stability interval.
        ConvergenceError: if the tail bound is not met within ``max_segments``.
    """
    _check_stationary(plant)
    if not rel_tol > 0:
        raise ValueError(f"rel_tol must be positive, got {rel_tol}")
    fs = FundamentalSolution(plant)
    tau = plant.tau
    hilbert = _hilbert(fs.max_degree + 1)
    vander = np.vander(_PROBE_U, fs.max_degree + 1, increasing=True)

    total = 0.0
    peaks = []
    for m in range(max_segments):
        c = fs.coefficients(m)
        d = len(c)
        total += tau * float(c @ hilbert[:d, :d] @ c)
        peaks.append(float(np.max(np.abs(vander[:, :d] @ c))))
        if m + 1 < 2 * window:
            continue
        recent = max(peaks[-window:])
        previous = max(peaks[-2 * window : -window])
        if recent == 0.0:
            return total
        if recent >= previous:
            continue
        rho = (recent / previous) ** (1.0 / window)
        tail = 2.0 * tau * recent**2 * rho**2 / (1.0 - rho**2)
        if tail <= rel_tol * total:
            return total
    raise ConvergenceError(
        f"fundamental-solution integral not converged after {max_segments} segments "
        f"(a={plant.a}, tau={plant.tau})"
    )
