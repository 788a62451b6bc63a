"""Euler-Maruyama Monte Carlo for the delayed ring error dynamics.

Simulates ``dx = -K x(t - tau_n) dt + Omega dw`` (and the scalar equation
``dx = -a x(t - tau) dt + dw``) on a fixed grid with step ``Ts`` and a delay
of exactly ``L = tau_n / Ts`` steps. Because the drift over any ``L``
consecutive steps only involves states from the previous ``L`` steps, the
integrator advances a whole delay interval at a time with one cumulative
sum; the arithmetic is the same as stepping one sample at a time.

Every Monte Carlo run owns an independent random stream spawned from
``(seed, run index)``, so results do not depend on how runs are batched.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .delay_core import ScalarDelayPlant
from .design import DesignProblem, scalar_variance_of_gains
from .errors import ConfigError, DivergenceError
from .spectral import RingFormation, build_feedback_matrix, check_domain, eigenvalues

DIVERGENCE_THRESHOLD = 1e9
X0_MODES = ("gaussian", "given", "zero")


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo setup for the ring error dynamics.

    ``burn_in=None`` selects ``10 (tau_n + 1/lambda_min)`` clamped to
    ``horizon/5``, where ``lambda_min`` is the slowest nonzero mode.
    ``x0_mode="gaussian"`` draws one standard normal ``x0`` from ``seed``
    and reuses it for all runs.
    """

    N: int
    gains: tuple
    tau_n: float
    Ts: float = 1e-3
    horizon: float = 100.0
    burn_in: Optional[float] = None
    mc_runs: int = 20
    seed: int = 0
    x0_mode: str = "gaussian"
    x0: Optional[tuple] = None
    record_every: Optional[int] = None
    divergence_threshold: float = DIVERGENCE_THRESHOLD

    def __post_init__(self):
        gains = tuple(float(g) for g in np.atleast_1d(self.gains))
        object.__setattr__(self, "gains", gains)
        try:
            check_domain(self.N, len(gains))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        _check_grid(self.tau_n, self.Ts, self.horizon, self.burn_in, self.mc_runs)
        if self.x0_mode not in X0_MODES:
            raise ConfigError(f"x0_mode must be one of {X0_MODES}, got {self.x0_mode!r}")
        if self.x0_mode == "given":
            if self.x0 is None or len(self.x0) != self.N:
                raise ConfigError(f"x0_mode='given' needs an x0 vector of length {self.N}")
            object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        if self.record_every is not None and self.record_every < 1:
            raise ConfigError("record_every must be a positive integer")

    @property
    def n(self) -> int:
        return len(self.gains)

    @property
    def delay_steps(self) -> int:
        return int(round(self.tau_n / self.Ts))

    def formation(self) -> RingFormation:
        return RingFormation(self.N, self.gains)

    def resolved_burn_in(self) -> float:
        if self.burn_in is not None:
            return self.burn_in
        lam = eigenvalues(self.formation()).nonzero_modes
        pos = lam[lam > 0]
        slow = 1.0 / pos.min() if pos.size else self.horizon
        return default_burn_in(self.tau_n, slow, self.horizon)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gains"] = list(self.gains)
        if self.x0 is not None:
            d["x0"] = list(self.x0)
        return d


def default_burn_in(tau: float, slowest_time_constant: float, horizon: float) -> float:
    return min(10.0 * (tau + slowest_time_constant), horizon / 5.0)


def _check_grid(tau, Ts, horizon, burn_in, mc_runs):
    if not (Ts > 0 and math.isfinite(Ts)):
        raise ConfigError(f"Ts must be positive, got {Ts}")
    if not tau > 0:
        raise ConfigError(f"delay must be positive, got {tau}")
    ratio = tau / Ts
    if abs(ratio - round(ratio)) > 1e-9:
        raise ConfigError(f"delay/Ts = {ratio!r} is not an integer number of steps")
    if not horizon > 0:
        raise ConfigError(f"horizon must be positive, got {horizon}")
    if burn_in is not None and not 0 <= burn_in < horizon:
        raise ConfigError(f"burn_in must lie in [0, horizon), got {burn_in}")
    if int(mc_runs) != mc_runs or mc_runs < 1:
        raise ConfigError(f"mc_runs must be an integer >= 1, got {mc_runs}")


@dataclass
class SimOutcome:
    """Steady-state second-moment estimates.

    ``per_run_variance[r]`` is the time average of ``||x - mean(x) 1||^2``
    over ``t in (burn_in, horizon]`` for run ``r``; ``mean_variance`` averages
    those over runs and ``stderr`` is their standard error (0 for one run).
    The mean coordinate is invariant under the dynamics, so centring only
    removes the constant offset inherited from ``x0``.
    """

    N: int
    per_run_variance: np.ndarray
    mean_variance: float
    per_coordinate_variance: float
    stderr: float
    burn_in: float
    steps: int
    samples_per_run: int
    mean_drift: float = 0.0
    times: Optional[np.ndarray] = field(default=None, repr=False)
    trajectory: Optional[np.ndarray] = field(default=None, repr=False)
    theory: Optional[float] = None

    def summary(self) -> dict:
        out = {
            "N": self.N,
            "mean_variance": self.mean_variance,
            "per_coordinate_variance": self.per_coordinate_variance,
            "stderr": self.stderr,
            "per_coordinate_stderr": self.stderr / self.N,
            "mc_runs": int(len(self.per_run_variance)),
            "burn_in": self.burn_in,
            "steps": self.steps,
            "samples_per_run": self.samples_per_run,
            "mean_drift": self.mean_drift,
        }
        if self.theory is not None:
            out["theory"] = self.theory
            out["theory_per_coordinate"] = self.theory / self.N
        return out


def _run_streams(seed: int, runs: int) -> list:
    return [np.random.default_rng(np.random.SeedSequence([seed, r])) for r in range(runs)]


def _x0_from_config(config: SimConfig) -> np.ndarray:
    if config.x0_mode == "given":
        return np.array(config.x0)
    if config.x0_mode == "zero":
        return np.zeros(config.N)
    # separate stream from the noise streams: spawn key (seed, runs-independent tag)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2**31 - 1]))
    return rng.standard_normal(config.N)


class _NoiseBuffer:
    """Standard normals for all runs, drawn per stream in large chunks.

    Each stream is consumed in order, so the values do not depend on the
    chunk size.
    """

    def __init__(self, streams, d: int, chunk: int):
        self.streams, self.d, self.chunk = streams, d, chunk
        self.buf = np.empty((0, len(streams), d))
        self.pos = 0

    def take(self, b: int) -> np.ndarray:
        if self.pos + b > len(self.buf):
            rest = self.buf[self.pos:]
            size = max(self.chunk, b - len(rest))
            fresh = np.stack([s.standard_normal((size, self.d)) for s in self.streams], axis=1)
            self.buf = np.concatenate([rest, fresh]) if len(rest) else fresh
            self.pos = 0
        out = self.buf[self.pos:self.pos + b]
        self.pos += b
        return out


def _integrate(K: np.ndarray, x0: np.ndarray, L: int, Ts: float, steps: int,
               first_sample: int, streams: Sequence[np.random.Generator],
               project: bool, threshold: float, record_every: Optional[int]) -> dict:
    """Vectorized Euler-Maruyama over all runs, one delay interval per pass."""
    R, d = len(streams), len(x0)
    sqrt_ts = math.sqrt(Ts)
    KT = K.T
    hist = np.zeros((L, R, d))
    x = np.broadcast_to(x0, (R, d)).copy()
    y0 = x0.mean()
    acc = np.zeros(R)
    count = 0
    drift = 0.0
    rec_t, rec_x = [], []
    if record_every is not None:
        rec_t.append(0.0)
        rec_x.append(x[0].copy())
    source = _NoiseBuffer(streams, d, chunk=max(L, 2**18 // (R * d)))
    k = 0  # index of the current state x_k
    while k < steps:
        b = min(L, steps - k)
        noise = source.take(b)
        if project:
            noise = noise - noise.mean(axis=2, keepdims=True)
        incr = (-Ts) * (hist[:b] @ KT) + sqrt_ts * noise
        block = np.empty((b + 1, R, d))
        block[0] = x
        block[1:] = incr
        np.cumsum(block, axis=0, out=block)
        new = block[1:]  # states x_{k+1} .. x_{k+b}

        norms = np.sqrt(np.einsum("brd,brd->br", new, new))
        if not np.all(norms <= threshold):
            bad = ~(norms <= threshold)
            j = int(np.argmax(bad.any(axis=1)))
            r = int(np.argmax(bad[j]))
            partial = _partial(rec_t, rec_x, acc, count)
            raise DivergenceError(run=r, step=k + j + 1, time=(k + j + 1) * Ts,
                                  norm=float(norms[j, r]), partial=partial)

        if project:
            means = new.mean(axis=2)
            centred = new - means[..., None]
            drift = max(drift, float(np.max(np.abs(means - y0))))
        else:
            centred = new
        lo = max(first_sample - (k + 1), 0)
        if lo < b:
            acc += np.einsum("brd,brd->r", centred[lo:], centred[lo:])
            count += b - lo
        if record_every is not None:
            idx = np.arange(k + 1, k + b + 1)
            sel = idx % record_every == 0
            if np.any(sel):
                rec_t.extend((idx[sel] * Ts).tolist())
                rec_x.extend(new[sel, 0, :])

        # next pass needs x_{k+b-L} .. x_{k+b-1}; a short block only occurs last
        if b == L:
            hist = block[:L]
        x = new[-1].copy()
        k += b
    return {"acc": acc, "count": count, "drift": drift,
            "times": np.array(rec_t) if record_every is not None else None,
            "trajectory": np.array(rec_x) if record_every is not None else None}


def _partial(rec_t, rec_x, acc, count) -> dict:
    return {
        "times": np.array(rec_t) if rec_t else None,
        "trajectory": np.array(rec_x) if rec_x else None,
        "samples": count,
    }


def _outcome(N: int, res: dict, burn_in: float, steps: int) -> SimOutcome:
    count = res["count"]
    if count == 0:
        raise ConfigError("no samples after burn-in; increase horizon or reduce burn_in")
    per_run = res["acc"] / count
    R = len(per_run)
    mean = float(per_run.mean())
    stderr = float(per_run.std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0
    return SimOutcome(
        N=N,
        per_run_variance=per_run,
        mean_variance=mean,
        per_coordinate_variance=mean / N,
        stderr=stderr,
        burn_in=burn_in,
        steps=steps,
        samples_per_run=count,
        mean_drift=res["drift"],
        times=res["times"],
        trajectory=res["trajectory"],
    )


def _grid(Ts: float, horizon: float, burn_in: float) -> tuple:
    steps = int(math.floor(horizon / Ts + 1e-9))
    first = int(math.floor(burn_in / Ts + 1e-9)) + 1
    return steps, first


def simulate_error_dynamics(config: SimConfig) -> SimOutcome:
    """Monte Carlo of ``dx = -K x(t - tau_n) dt + Omega dw`` from ``config``.

    The initial segment is ``x0`` at ``t = 0`` and zero on ``[-tau_n, 0)``.
    Noise increments are ``Omega eta`` with ``eta ~ N(0, Ts I)``.

    Raises:
        DivergenceError: when any run's ``||x||`` exceeds the divergence
            threshold; ``partial`` holds the run-0 trajectory recorded so far.
    """
    K = build_feedback_matrix(config.formation())
    burn_in = config.resolved_burn_in()
    steps, first = _grid(config.Ts, config.horizon, burn_in)
    res = _integrate(K, _x0_from_config(config), config.delay_steps, config.Ts, steps,
                     first, _run_streams(config.seed, config.mc_runs), project=True,
                     threshold=config.divergence_threshold, record_every=config.record_every)
    return _outcome(config.N, res, burn_in, steps)


def analytic_variance(config: SimConfig) -> Optional[float]:
    """Closed-form ``E||x_inf||^2`` for the configured gains, or None if
    some mode is outside the stability interval."""
    problem = DesignProblem(config.N, config.n, config.tau_n)
    try:
        return scalar_variance_of_gains(problem, config.gains)
    except ValueError:
        return None


def estimate_scalar_variance(config: SimConfig) -> SimOutcome:
    """Ensemble estimate of the ring's scalar variance with its closed-form
    counterpart attached as ``theory`` (None when the design is unstable)."""
    out = simulate_error_dynamics(config)
    out.theory = analytic_variance(config)
    return out


def simulate_scalar(plant: ScalarDelayPlant, Ts: float = 1e-3, horizon: float = 2000.0,
                    burn_in: Optional[float] = None, mc_runs: int = 20, seed: int = 0,
                    x0: float = 1.0, record_every: Optional[int] = None,
                    divergence_threshold: float = DIVERGENCE_THRESHOLD) -> SimOutcome:
    """Monte Carlo of ``dx = -a x(t - tau) dt + dw`` (no projection).

    ``burn_in=None`` uses ``10 (tau + 1/a)`` clamped to ``horizon/5``.
    """
    _check_grid(plant.tau, Ts, horizon, burn_in, mc_runs)
    if burn_in is None:
        slow = 1.0 / plant.a if plant.a > 0 else horizon
        burn_in = default_burn_in(plant.tau, slow, horizon)
    steps, first = _grid(Ts, horizon, burn_in)
    L = int(round(plant.tau / Ts))
    res = _integrate(np.array([[plant.a]]), np.array([float(x0)]), L, Ts, steps, first,
                     _run_streams(seed, mc_runs), project=False,
                     threshold=divergence_threshold, record_every=record_every)
    return _outcome(1, res, burn_in, steps)


def euler_stationary_variance(lam: float, tau: float, Ts: float) -> float:
    """Exact stationary variance of the discretized scalar recursion
    ``x_{k+1} = x_k - Ts lam x_{k-L} + sqrt(Ts) xi_k`` with ``L = tau/Ts``.

    Solves the Yule-Walker equations for the autocovariances
    ``gamma_0 .. gamma_{L+1}`` (a sparse system with three entries per row).
    Differs from the continuous-time variance by the O(Ts) bias of the
    scheme. ``lam`` must lie in the continuous stability interval.
    """
    if not 0 < lam * tau < 0.5 * math.pi:
        raise ValueError(f"lam * tau = {lam * tau} is outside (0, pi/2)")
    L = int(round(tau / Ts))
    c = Ts * lam
    m = L + 2
    h = np.arange(1, m)
    rows = np.concatenate([[0, 0, 0], h, h, h])
    cols = np.concatenate([[0, 1, L + 1], h, h - 1, np.abs(h - L - 1)])
    vals = np.concatenate([[1.0, -1.0, c], np.ones(L + 1), -np.ones(L + 1), np.full(L + 1, c)])
    A = scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(m, m))
    rhs = np.zeros(m)
    rhs[0] = Ts
    gamma0 = float(scipy.sparse.linalg.spsolve(A, rhs)[0])
    if not (math.isfinite(gamma0) and gamma0 > 0):
        raise ValueError("discretized recursion has no stationary variance at this step")
    return gamma0
