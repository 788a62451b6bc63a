"""Exception types shared across the package."""

from __future__ import annotations


class RingDelayError(Exception):
    """Base class for all package errors."""


class InvalidPlantError(RingDelayError, ValueError):
    """A delay or gain outside its admissible domain (e.g. tau <= 0)."""


class DomainError(RingDelayError, ValueError):
    """Formation or problem parameters violate N >= 3, 1 <= n < N/2."""


class UnstablePlantError(RingDelayError, ValueError):
    """No stationary solution exists: the gain is outside (0, pi/(2 tau))."""


class InfeasibleGainsError(RingDelayError, ValueError):
    """Some closed-loop mode lies outside the stability interval.

    Attributes:
        mode: 1-based eigenvalue index of the first violating mode.
        eigenvalue: the offending eigenvalue.
        bound: the open upper limit pi/(2 tau).
    """

    def __init__(self, mode: int, eigenvalue: float, bound: float):
        self.mode = mode
        self.eigenvalue = eigenvalue
        self.bound = bound
        super().__init__(
            f"mode {mode} has eigenvalue {eigenvalue:.10g} outside (0, {bound:.10g})"
        )


class ConvergenceError(RingDelayError, RuntimeError):
    """An iterative routine exhausted its budget before meeting its tolerance."""


class ConfigError(RingDelayError, ValueError):
    """Simulation or CLI configuration failed validation."""


class DivergenceError(RingDelayError, RuntimeError):
    """A simulated trajectory exceeded the divergence threshold.

    Attributes:
        run: MC run index that diverged first.
        step: time step index at which the threshold was crossed.
        time: simulated time of the crossing.
        norm: state norm at the crossing.
        partial: optional partial outcome collected up to the abort.
    """

    def __init__(self, run: int, step: int, time: float, norm: float, partial=None):
        self.run = run
        self.step = step
        self.time = time
        self.norm = norm
        self.partial = partial
        super().__init__(
            f"run {run} diverged at t={time:.6g} (step {step}): |x|={norm:.3g}"
        )

    def report(self) -> dict:
        return {
            "status": "diverged",
            "run": self.run,
            "step": self.step,
            "time": self.time,
            "norm": self.norm,
        }
