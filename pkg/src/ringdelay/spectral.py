"""Circulant feedback structure of a ring formation.

Agent ``i`` feeds back the differences to the agents ``l`` positions ahead
and behind, ``l = 1..n``, with gain ``k[l-1]``. The resulting feedback
matrix is symmetric circulant, so its spectrum is the real DFT of the
first row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError


def n_max(N: int) -> int:
    """Largest ring count strictly below ``N/2``."""
    return (N + 1) // 2 - 1


def check_domain(N: int, n: int) -> None:
    if int(N) != N or N < 3:
        raise DomainError(f"need an integer agent count N >= 3, got {N}")
    if int(n) != n or not 1 <= n <= n_max(N):
        raise DomainError(f"need 1 <= n < N/2 (n_max={n_max(N)} for N={N}), got n={n}")


@dataclass(frozen=True)
class RingFormation:
    N: int
    k: tuple

    def __init__(self, N: int, k: Sequence[float]):
        k = tuple(float(v) for v in np.atleast_1d(np.asarray(k, dtype=float)))
        check_domain(N, len(k))
        object.__setattr__(self, "N", int(N))
        object.__setattr__(self, "k", k)

    @property
    def n(self) -> int:
        return len(self.k)

    @classmethod
    def uniform(cls, N: int, n: int, alpha: float) -> RingFormation:
        return cls(N, [alpha] * n)


@dataclass(frozen=True)
class CirculantSpectrum:
    eigenvalues: np.ndarray

    @property
    def max_eigenvalue(self) -> float:
        return float(np.max(self.eigenvalues))

    @property
    def nonzero_modes(self) -> np.ndarray:
        """Eigenvalues ``lambda_2..lambda_N`` (the mean mode is dropped)."""
        return self.eigenvalues[1:]

    def __len__(self):
        return len(self.eigenvalues)


def ring_basis(N: int, n: int) -> np.ndarray:
    """Matrix ``B`` of shape (N, n) with ``B[i, l-1] = 2 (1 - cos(2 pi i l / N))``.

    The spectrum for gains ``k`` is ``B @ k``; row 0 is identically zero.
    """
    check_domain(N, n)
    i = np.arange(N)[:, None]
    ell = np.arange(1, n + 1)[None, :]
    # integer reduction keeps the angle argument small and exact
    phase = (i * ell) % N
    return 2.0 * (1.0 - np.cos(2.0 * math.pi * phase / N))


def eigenvalues(formation: RingFormation) -> CirculantSpectrum:
    lam = ring_basis(formation.N, formation.n) @ np.asarray(formation.k)
    return CirculantSpectrum(lam)


def unit_eigenvalues(N: int, n: int) -> np.ndarray:
    """Eigenvalues ``g_i(n)`` of the feedback matrix with all gains equal to one."""
    return ring_basis(N, n).sum(axis=1)


def first_row(formation: RingFormation) -> np.ndarray:
    N, k = formation.N, np.asarray(formation.k)
    row = np.zeros(N)
    row[0] = 2.0 * k.sum()
    for ell, kl in enumerate(k, start=1):
        row[ell] -= kl
        row[N - ell] -= kl
    return row


def build_feedback_matrix(formation: RingFormation) -> np.ndarray:
    """Dense symmetric circulant ``K = K_f + K_f^T``; rows sum to zero."""
    row = first_row(formation)
    N = formation.N
    idx = (np.arange(N)[None, :] - np.arange(N)[:, None]) % N
    return row[idx]


def projection_offmean(N: int) -> np.ndarray:
    """Off-mean projection ``I - 11^T/N``."""
    if N < 2:
        raise DomainError(f"need N >= 2, got {N}")
    return np.eye(N) - np.full((N, N), 1.0 / N)
