"""Feedback-gain design for ring formations with delayed feedback.

The stationary error variance of the ring is the sum of the scalar delay
variances of its nonzero modes, ``F(k) = sum_{i>=2} sigma2(lambda_i(k))``,
which is convex in ``k`` because every ``lambda_i`` is linear in ``k``.
Three designs are offered:

* the closed-form near-optimal gain ``lambda* / (2n + 1)`` (all rings equal),
  which minimizes ``sum_{i>=2} (lambda_i - lambda*)^2``;
* the exact single-parameter optimum (all rings share one gain);
* the exact multi-parameter optimum over ``k`` in R^n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import delay_core
from .delay_core import BOUNDARY_GUARD, HALF_PI
from .errors import ConvergenceError, DomainError, InfeasibleGainsError
from .spectral import CirculantSpectrum, check_domain, ring_basis, unit_eigenvalues

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0

# Exact solvers stay below this fraction of pi/(2 tau) for every mode.
CONSTRAINT_SHRINK = 1.0 - 1e-6


@dataclass(frozen=True)
class DesignProblem:
    N: int
    n: int
    tau_n: float

    def __post_init__(self):
        check_domain(self.N, self.n)
        if not (math.isfinite(self.tau_n) and self.tau_n > 0):
            raise DomainError(f"feedback delay must be positive, got tau_n={self.tau_n}")

    @property
    def lambda_star(self) -> float:
        return delay_core.optimal_scalar_gain(self.tau_n).lambda_star

    @property
    def eigenvalue_bound(self) -> float:
        return HALF_PI / self.tau_n

    def basis(self) -> np.ndarray:
        return _basis(self.N, self.n)


_BASIS_CACHE: dict = {}


def _basis(N: int, n: int) -> np.ndarray:
    key = (N, n)
    if key not in _BASIS_CACHE:
        B = ring_basis(N, n)
        B.setflags(write=False)
        _BASIS_CACHE[key] = B
    return _BASIS_CACHE[key]


@dataclass
class DesignResult:
    problem: DesignProblem
    method: str
    gains: np.ndarray
    spectrum: CirculantSpectrum
    scalar_variance: float
    feasibility_margin: float
    iterations: int = 0
    gradient_norm: float = float("nan")
    mode_variances: np.ndarray = field(default=None, repr=False)

    @property
    def alpha(self) -> float:
        """Common gain when all entries of ``gains`` coincide, else NaN."""
        g = self.gains
        return float(g[0]) if np.all(g == g[0]) else float("nan")


def _as_gains(problem: DesignProblem, k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if k.ndim == 0:
        return np.full(problem.n, float(k))
    if k.shape != (problem.n,):
        raise DomainError(f"expected {problem.n} gains, got shape {k.shape}")
    return k


def _modes(problem: DesignProblem, k) -> np.ndarray:
    return problem.basis()[1:] @ _as_gains(problem, k)


def _check_modes(problem: DesignProblem, lam: np.ndarray) -> None:
    limit = (HALF_PI - BOUNDARY_GUARD) / problem.tau_n
    bad = np.flatnonzero(~((lam > 0) & (lam <= limit)))
    if bad.size:
        i = int(bad[0])
        raise InfeasibleGainsError(i + 2, float(lam[i]), problem.eigenvalue_bound)


def _feasible(problem: DesignProblem, lam: np.ndarray, shrink: float = CONSTRAINT_SHRINK) -> bool:
    return bool(np.all(lam > 0) and np.all(lam < shrink * problem.eigenvalue_bound))


def mode_variances(problem: DesignProblem, k) -> np.ndarray:
    """Per-mode stationary variances for modes ``i = 2..N``."""
    lam = _modes(problem, k)
    _check_modes(problem, lam)
    return delay_core._variance(lam, problem.tau_n)


def scalar_variance_of_gains(problem: DesignProblem, k) -> float:
    """Predicted ``E ||x_inf||^2`` for gains ``k`` (scalar = uniform gains).

    Raises:
        InfeasibleGainsError: naming the first mode (1-based, ``>= 2``) whose
            eigenvalue leaves ``(0, pi/(2 tau_n))``.
    """
    return float(np.sum(mode_variances(problem, k)))


def scalar_variance_gradient(problem: DesignProblem, k) -> np.ndarray:
    lam = _modes(problem, k)
    _check_modes(problem, lam)
    return problem.basis()[1:].T @ delay_core._variance_derivative(lam, problem.tau_n)


def scalar_variance_hessian(problem: DesignProblem, k) -> np.ndarray:
    lam = _modes(problem, k)
    _check_modes(problem, lam)
    B = problem.basis()[1:]
    w = delay_core._variance_second_derivative(lam, problem.tau_n)
    return B.T @ (w[:, None] * B)


def quadratic_cost(problem: DesignProblem, k) -> float:
    """``sum_{i>=2} (lambda_i(k) - lambda*)^2``; defined for any ``k``."""
    return float(np.sum((_modes(problem, k) - problem.lambda_star) ** 2))


def quadratic_cost_gradient(problem: DesignProblem, k) -> np.ndarray:
    r = _modes(problem, k) - problem.lambda_star
    return 2.0 * problem.basis()[1:].T @ r


def near_optimal_alpha(problem: DesignProblem) -> float:
    return problem.lambda_star / (2 * problem.n + 1)


def near_optimal_gains_multi(problem: DesignProblem) -> np.ndarray:
    return np.full(problem.n, near_optimal_alpha(problem))


def _result(problem, method, k, iterations=0, grad_norm=float("nan")) -> DesignResult:
    k = _as_gains(problem, k).copy()
    lam_all = problem.basis() @ k
    mv = mode_variances(problem, k)
    spectrum = CirculantSpectrum(lam_all)
    return DesignResult(
        problem=problem,
        method=method,
        gains=k,
        spectrum=spectrum,
        scalar_variance=float(mv.sum()),
        feasibility_margin=problem.eigenvalue_bound - spectrum.max_eigenvalue,
        iterations=iterations,
        gradient_norm=grad_norm,
        mode_variances=mv,
    )


def near_optimal_design(problem: DesignProblem) -> DesignResult:
    k = near_optimal_gains_multi(problem)
    return _result(problem, "near-optimal", k, grad_norm=float(np.linalg.norm(
        scalar_variance_gradient(problem, k))))


def golden_section(f: Callable[[float], float], lo: float, hi: float,
                   rel_tol: float = 1e-10, max_iter: int = 500) -> float:
    """Minimizer of a unimodal ``f`` on ``[lo, hi]`` by golden-section search."""
    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= rel_tol * max(abs(a), abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    return c if fc < fd else d


def optimize_alpha_exact(problem: DesignProblem, rel_tol: float = 1e-10,
                         max_newton: int = 50) -> DesignResult:
    """Exact minimizer of the variance sum over a common gain ``alpha``.

    Golden-section search over ``(eps, CONSTRAINT_SHRINK * pi/(2 tau g_M))``
    brackets the optimum; Newton steps on the analytic derivative then drive
    ``|alpha F'(alpha)|`` to rounding level.
    """
    g = unit_eigenvalues(problem.N, problem.n)[1:]
    tau = problem.tau_n
    hi = CONSTRAINT_SHRINK * problem.eigenvalue_bound / g.max()
    lo = 1e-9 * hi

    def F(a):
        return float(np.sum(delay_core._variance(g * a, tau)))

    def dF(a):
        return float(g @ delay_core._variance_derivative(g * a, tau))

    def d2F(a):
        return float((g * g) @ delay_core._variance_second_derivative(g * a, tau))

    alpha = golden_section(F, lo, hi, rel_tol=rel_tol)
    # derivative sign change brackets the root for the Newton safeguard
    left, right = lo, hi
    it = 0
    for it in range(1, max_newton + 1):
        d1 = dF(alpha)
        if d1 < 0:
            left = alpha
        else:
            right = alpha
        if abs(alpha * d1) <= 1e-14 * F(alpha):
            break
        step = d1 / d2F(alpha)
        nxt = alpha - step
        if not left < nxt < right:
            nxt = 0.5 * (left + right)
        if nxt == alpha:
            break
        alpha = nxt
    grad = dF(alpha)
    res = _result(problem, "exact-single", np.full(problem.n, alpha), iterations=it,
                  grad_norm=abs(grad))
    return res


def _random_feasible_start(problem: DesignProblem, rng: np.random.Generator) -> np.ndarray:
    k = rng.uniform(0.05, 1.0, size=problem.n)
    lam_max = (problem.basis() @ k).max()
    return k * rng.uniform(0.1, 0.9) * problem.eigenvalue_bound / lam_max


def optimize_gains_exact(problem: DesignProblem, start: Optional[Sequence[float]] = None,
                         max_iter: int = 200, grad_tol: float = 1e-7) -> DesignResult:
    """Exact minimizer of the variance sum over ``k`` in R^n.

    Damped Newton iteration on the analytic Hessian, started from the
    near-optimal gains unless ``start`` is given. Backtracking rejects any
    step that leaves ``0 < lambda_i < CONSTRAINT_SHRINK * pi/(2 tau_n)``,
    so iterates stay strictly feasible. With ``n == 1`` the problem is the
    single-parameter one and is delegated to :func:`optimize_alpha_exact`.

    Raises:
        ConvergenceError: if the gradient norm is still above
            ``grad_tol * (1 + |F|)`` after ``max_iter`` iterations.
    """
    if problem.n == 1 and start is None:
        res = optimize_alpha_exact(problem)
        res.method = "exact-multi"
        return res
    B = problem.basis()[1:]
    tau = problem.tau_n
    k = near_optimal_gains_multi(problem) if start is None else _as_gains(problem, start).copy()
    lam = B @ k
    if not _feasible(problem, lam):
        _check_modes(problem, lam)
        raise InfeasibleGainsError(int(np.argmax(lam)) + 2, float(lam.max()),
                                   CONSTRAINT_SHRINK * problem.eigenvalue_bound)
    f = float(np.sum(delay_core._variance(lam, tau)))
    for it in range(1, max_iter + 1):
        grad = B.T @ delay_core._variance_derivative(lam, tau)
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= 1e-3 * grad_tol * (1.0 + abs(f)):
            break
        H = B.T @ (delay_core._variance_second_derivative(lam, tau)[:, None] * B)
        try:
            direction = -np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            direction = -grad
        slope = float(grad @ direction)
        if slope >= 0:
            direction, slope = -grad, -gnorm**2
        t = 1.0
        improved = False
        while t > 1e-20:
            k_try = k + t * direction
            lam_try = B @ k_try
            if _feasible(problem, lam_try):
                f_try = float(np.sum(delay_core._variance(lam_try, tau)))
                if f_try <= f + 1e-4 * t * slope:
                    improved = True
                    break
                # near the optimum the decrease is below rounding in f;
                # fall back to requiring a smaller gradient
                if f_try <= f + 64 * np.finfo(float).eps * abs(f):
                    g_try = B.T @ delay_core._variance_derivative(lam_try, tau)
                    if np.linalg.norm(g_try) < 0.5 * gnorm:
                        improved = True
                        break
            t *= 0.5
        if not improved:
            # no representable decrease left: optimum reached at rounding level
            break
        k, lam, f = k_try, lam_try, f_try
    grad = B.T @ delay_core._variance_derivative(lam, tau)
    gnorm = float(np.linalg.norm(grad))
    if gnorm > grad_tol * (1.0 + abs(f)):
        raise ConvergenceError(
            f"multi-gain solver stopped with gradient norm {gnorm:.3g} after {it} iterations"
        )
    return _result(problem, "exact-multi", k, iterations=it, grad_norm=gnorm)


def relative_error(problem: DesignProblem, exact: str = "multi") -> float:
    """Relative variance increase of the near-optimal design over the exact one.

    Args:
        exact: ``"multi"`` compares against the optimum over ``k`` in R^n,
            ``"single"`` against the best common gain.
    """
    if exact == "multi":
        best = optimize_gains_exact(problem).scalar_variance
    elif exact == "single":
        best = optimize_alpha_exact(problem).scalar_variance
    else:
        raise ValueError(f"exact must be 'multi' or 'single', got {exact!r}")
    approx = scalar_variance_of_gains(problem, near_optimal_gains_multi(problem))
    return (approx - best) / best
