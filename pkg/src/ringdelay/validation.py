"""End-to-end consistency checks run by ``ringdelay validate``."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, List

import numpy as np

from . import delay_core, design, sde_sim, spectral, topology
from .delay_core import ScalarDelayPlant


@dataclass
class CheckResult:
    name: str
    tolerance: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name} (tol: {self.tolerance}) {self.detail} [{self.seconds:.2f}s]"


@dataclass
class Check:
    name: str
    tolerance: str
    run: Callable[[], tuple]
    level: str = "fast"


def _oracle_integral():
    worst = 0.0
    for at in np.linspace(0.1, 1.45, 8):
        for tau in (0.1, 2.0):
            p = ScalarDelayPlant(at / tau, tau)
            ref = delay_core.steady_state_variance(p)
            val = delay_core.fundamental_variance_integral(p, rel_tol=1e-6)
            worst = max(worst, abs(val - ref) / ref)
    return worst <= 1e-6, f"max rel dev {worst:.2e}"


def _convexity():
    worst = math.inf
    for tau in (0.1, 1.0, 10.0):
        a = np.linspace(0.01, 0.99, 100) * math.pi / (2 * tau)
        v = delay_core._variance(a, tau)
        worst = min(worst, float(np.min(v[:-2] - 2 * v[1:-1] + v[2:])))
    return worst > 0, f"min second difference {worst:.3e}"


def _dft_identities():
    bad = []
    for N in range(3, 65):
        for n in range(1, spectral.n_max(N) + 1):
            g = spectral.unit_eigenvalues(N, n)[1:]
            if abs(g.sum() - 2 * N * n) > 1e-9 * N * n or \
                    abs((g * g).sum() - N * (4 * n * n + 2 * n)) > 1e-9 * N * n * n:
                bad.append((N, n))
    return not bad, f"{len(bad)} violations"


def _closed_form_vs_numeric():
    worst = 0.0
    for N, n, tau in [(5, 1, 1.0), (12, 3, 0.2), (50, 2, 0.02), (50, 10, 0.1), (64, 20, 0.5)]:
        p = design.DesignProblem(N, n, tau)
        g = spectral.unit_eigenvalues(N, n)[1:]
        # least-squares fit of g*alpha to lambda*
        alpha_ls = float(np.linalg.lstsq(g[:, None], np.full(g.size, p.lambda_star), rcond=None)[0][0])
        worst = max(worst, abs(alpha_ls - design.near_optimal_alpha(p)) / alpha_ls)
    return worst <= 1e-9, f"max rel dev {worst:.2e}"


def _factorization():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(30):
        N = int(rng.integers(3, 80))
        n = int(rng.integers(1, spectral.n_max(N) + 1))
        f = float(rng.uniform(1.0, 5.0))
        tau_min = float(10 ** rng.uniform(-3, 0))
        p = design.DesignProblem(N, n, f * tau_min)
        direct = design.scalar_variance_of_gains(p, design.near_optimal_gains_multi(p))
        fact = topology.coefficient_C_star(N, n) * f * tau_min
        worst = max(worst, abs(direct - fact) / direct)
    return worst <= 1e-12, f"max rel dev {worst:.2e}"


def _topology_claims():
    N = 50
    nm = spectral.n_max(N)
    const = topology.optimize_topology(N, topology.DelayRate("constant"), 0.01).n_star
    lin = topology.optimize_topology(N, topology.DelayRate("linear"), 0.01).n_star
    sq = topology.optimize_topology(N, topology.DelayRate("sqrt"), 0.01).n_star
    C = np.array([topology.coefficient_C_star(N, n) for n in range(1, nm + 1)])
    ok = const == nm and lin < nm and sq >= lin and np.all(np.diff(C) < 0) and np.all(np.diff(C, 2) > 0)
    return ok, f"n*(const)={const} n*(linear)={lin} n*(sqrt)={sq} n_max={nm}"


def _exact_ordering():
    worst = -math.inf
    for N, n, tau in [(50, 2, 0.02), (50, 10, 0.1), (20, 3, 0.05)]:
        p = design.DesignProblem(N, n, tau)
        multi = design.optimize_gains_exact(p).scalar_variance
        single = design.optimize_alpha_exact(p).scalar_variance
        near = design.near_optimal_design(p).scalar_variance
        worst = max(worst, (multi - single) / single, (single - near) / near)
    return worst <= 1e-12, f"max ordering violation {worst:.2e}"


@lru_cache(maxsize=None)
def _ring_sim(N, n, tau, horizon):
    p = design.DesignProblem(N, n, tau)
    cfg = sde_sim.SimConfig(N=N, gains=tuple(design.near_optimal_gains_multi(p)), tau_n=tau,
                            Ts=1e-3, horizon=horizon, mc_runs=20, seed=0)
    return sde_sim.estimate_scalar_variance(cfg)


def _sim_vs_theory(N, n, tau, horizon):
    def run():
        out = _ring_sim(N, n, tau, horizon)
        tol = max(3 * out.stderr, 0.05 * out.theory)
        dev = abs(out.mean_variance - out.theory)
        return dev <= tol, (f"sim {out.mean_variance:.4f} +- {out.stderr:.4f} vs theory "
                            f"{out.theory:.4f} (per-coordinate {out.per_coordinate_variance:.4f})")
    return run


def _per_coordinate_bands():
    parts, ok = [], True
    for (N, n, tau), (lo, hi) in {(50, 2, 0.02): (0.04, 0.16), (50, 10, 0.1): (0.10, 0.38)}.items():
        pc = _ring_sim(N, n, tau, 100.0).per_coordinate_variance
        ok = ok and lo <= pc <= hi
        parts.append(f"n={n}: {pc:.4f} in [{lo}, {hi}]")
    return ok, "; ".join(parts)


def _stability_boundary():
    tau = 1.0
    bound = math.pi / (2 * tau)
    try:
        sde_sim.simulate_scalar(ScalarDelayPlant(1.1 * bound, tau), Ts=1e-3, horizon=2000.0,
                                mc_runs=4, seed=0)
        diverged = False
    except sde_sim.DivergenceError:
        diverged = True
    p = ScalarDelayPlant(0.9 * bound, tau)
    out = sde_sim.simulate_scalar(p, Ts=1e-3, horizon=2000.0, mc_runs=20, seed=0)
    ref = delay_core.steady_state_variance(p)
    rel = abs(out.mean_variance - ref) / ref
    return diverged and rel <= 0.10, f"diverged above={diverged}, rel dev below={rel:.3f}"


CHECKS: List[Check] = [
    Check("fundamental-solution integral vs closed form", "1e-6 rel", _oracle_integral),
    Check("strict convexity of stationary variance", "second differences > 0", _convexity),
    Check("DFT sum identities, 3 <= N <= 64", "1e-9 rel", _dft_identities),
    Check("near-optimal gain vs least-squares minimizer", "1e-9 rel", _closed_form_vs_numeric),
    Check("C*(n) f(n) tau_min factorization", "1e-12 rel", _factorization),
    Check("topology claims at N=50", "exact", _topology_claims),
    Check("exact-multi <= exact-single <= near-optimal", "1e-12 rel", _exact_ordering),
    Check("simulation vs theory (20, 3, 0.05)", "max(3 se, 5%)", _sim_vs_theory(20, 3, 0.05, 60.0)),
    Check("simulation vs theory (50, 2, 0.02)", "max(3 se, 5%)",
          _sim_vs_theory(50, 2, 0.02, 100.0), level="full"),
    Check("simulation vs theory (50, 10, 0.1)", "max(3 se, 5%)",
          _sim_vs_theory(50, 10, 0.1, 100.0), level="full"),
    Check("per-coordinate variance near the reference values", "[0.04,0.16], [0.10,0.38]",
          _per_coordinate_bands, level="full"),
    Check("stability boundary +-10%", "divergence / 10% rel", _stability_boundary, level="full"),
]


def run_checks(level: str = "fast", echo: Callable[[str], None] = print) -> List[CheckResult]:
    if level not in ("fast", "full"):
        raise ValueError(f"level must be 'fast' or 'full', got {level!r}")
    results = []
    for chk in CHECKS:
        if chk.level == "full" and level != "full":
            continue
        t0 = time.perf_counter()
        try:
            passed, detail = chk.run()
        except Exception as exc:  # a crashing check is a failed check
            passed, detail = False, f"error: {exc!r}"
        res = CheckResult(chk.name, chk.tolerance, bool(passed), detail, time.perf_counter() - t0)
        echo(res.line())
        results.append(res)
    return results
