"""Latency versus connectivity: choosing the number of communication rings.

With delay ``tau_n = f(n) tau_min`` the near-optimal variance factors as
``C*(n) f(n) tau_min`` where ``C*(n)`` depends only on ``N`` and ``n``.
The best ring count therefore depends on the growth rate ``f`` alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from . import delay_core
from .design import DesignProblem, optimize_alpha_exact, optimize_gains_exact
from .errors import DomainError
from .spectral import check_domain, n_max, unit_eigenvalues

RATE_KINDS = ("linear", "sqrt", "constant", "table")


@dataclass(frozen=True)
class DelayRate:
    """Non-decreasing delay growth ``f(n)`` with ``f(n) > 0``.

    ``table`` rates must list every ``n`` that is evaluated; gaps are an
    input error rather than something to interpolate.
    """

    kind: str = "linear"
    table: Optional[Mapping[int, float]] = field(default=None, hash=False)

    def __post_init__(self):
        if self.kind not in RATE_KINDS:
            raise ValueError(f"unknown rate kind {self.kind!r}; choose from {RATE_KINDS}")
        if self.kind == "table":
            if not self.table:
                raise ValueError("table rate requires a non-empty table")
            items = sorted((int(n), float(v)) for n, v in self.table.items())
            vals = [v for _, v in items]
            if any(v <= 0 or not math.isfinite(v) for v in vals):
                raise ValueError("table rate values must be positive and finite")
            if any(b < a for a, b in zip(vals, vals[1:])):
                raise ValueError("table rate must be non-decreasing in n")
            object.__setattr__(self, "table", dict(items))

    def __call__(self, n: int) -> float:
        if n < 1:
            raise DomainError(f"ring count must be >= 1, got {n}")
        if self.kind == "linear":
            return float(n)
        if self.kind == "sqrt":
            return math.sqrt(n)
        if self.kind == "constant":
            return 1.0
        try:
            return self.table[int(n)]
        except KeyError:
            raise ValueError(f"delay-rate table has no entry for n={n}") from None

    def check_covers(self, n_hi: int) -> None:
        if self.kind == "table":
            missing = [n for n in range(1, n_hi + 1) if n not in self.table]
            if missing:
                raise ValueError(f"delay-rate table misses n={missing}")

    def describe(self) -> str:
        return self.kind if self.kind != "table" else f"table{sorted(self.table.items())}"


def per_mode_coefficients(N: int, n: int) -> np.ndarray:
    """``C_i*(n)`` for modes ``i = 2..N``: per-mode variance at the near-optimal
    gain divided by the delay."""
    check_domain(N, n)
    b = delay_core.beta_star()
    a = unit_eigenvalues(N, n)[1:] / (2 * n + 1)
    x = a * b
    return (1.0 + np.sin(x)) / (2.0 * x * np.cos(x))


def coefficient_C_star(N: int, n: int) -> float:
    return float(np.sum(per_mode_coefficients(N, n)))


def variance_of_topology(N: int, n: int, rate: DelayRate, tau_min: float,
                         mode: str = "near-optimal") -> float:
    """Ring variance with ``n`` rings and delay ``f(n) tau_min``.

    ``mode="near-optimal"`` uses the closed-form factorization; the exact
    modes re-solve the gain design at that delay (slower).
    """
    if not tau_min > 0:
        raise DomainError(f"tau_min must be positive, got {tau_min}")
    tau_n = rate(n) * tau_min
    if mode == "near-optimal":
        return coefficient_C_star(N, n) * rate(n) * tau_min
    problem = DesignProblem(N, n, tau_n)
    if mode == "exact-single":
        return optimize_alpha_exact(problem).scalar_variance
    if mode == "exact-multi":
        return optimize_gains_exact(problem).scalar_variance
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class TopologyEntry:
    n: int
    C_star: float
    f: float
    variance: float


@dataclass(frozen=True)
class TopologySweep:
    N: int
    tau_min: float
    rate: DelayRate
    mode: str
    per_n: tuple
    n_star: int

    @property
    def best(self) -> TopologyEntry:
        return self.per_n[self.n_star - 1]


def optimize_topology(N: int, rate: DelayRate, tau_min: float,
                      mode: str = "near-optimal") -> TopologySweep:
    """Exhaustive sweep of ``n = 1..n_max(N)``; ties go to the smaller ``n``.

    In the exact modes ``C_star`` holds the exact variance divided by
    ``f(n) tau_min``.
    """
    if int(N) != N or N < 3:
        raise DomainError(f"need N >= 3, got {N}")
    hi = n_max(N)
    rate.check_covers(hi)
    entries = []
    for n in range(1, hi + 1):
        f = rate(n)
        if mode == "near-optimal":
            c = coefficient_C_star(N, n)
            var = c * f * tau_min
        else:
            var = variance_of_topology(N, n, rate, tau_min, mode=mode)
            c = var / (f * tau_min)
        entries.append(TopologyEntry(n=n, C_star=c, f=f, variance=var))
    best = min(entries, key=lambda e: (e.variance, e.n))
    return TopologySweep(N=N, tau_min=tau_min, rate=rate, mode=mode,
                         per_n=tuple(entries), n_star=best.n)
