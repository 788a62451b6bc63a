import math

import numpy as np
import pytest

from ringdelay import design as d
from ringdelay import sde_sim as s
from ringdelay import spectral as sp
from ringdelay.delay_core import ScalarDelayPlant, optimal_scalar_gain, steady_state_variance
from ringdelay.errors import ConfigError, DivergenceError


def ring_config(N, n, tau, **kw):
    p = d.DesignProblem(N, n, tau)
    return s.SimConfig(N=N, gains=tuple(d.near_optimal_gains_multi(p)), tau_n=tau, **kw)


def naive_loop(K, x0, L, Ts, steps, rng, project):
    """One Euler-Maruyama step at a time with an explicit ring buffer."""
    N = len(x0)
    buf = np.zeros((L, N))  # x_{k-L} .. x_{k-1}, zero before t = 0
    x = x0.copy()
    out = [x.copy()]
    for k in range(steps):
        delayed = buf[k % L].copy()
        buf[k % L] = x
        eta = rng.standard_normal(N)
        if project:
            eta = eta - eta.mean()
        x = x - Ts * (K @ delayed) + math.sqrt(Ts) * eta
        out.append(x.copy())
    return np.array(out)


def test_block_integrator_matches_step_loop():
    cfg = s.SimConfig(N=7, gains=(1.3, 0.4), tau_n=0.013, Ts=1e-3, horizon=0.2, burn_in=0.0,
                      mc_runs=1, seed=5, x0_mode="given", x0=tuple(np.arange(7.0)),
                      record_every=1)
    out = s.simulate_error_dynamics(cfg)
    K = sp.build_feedback_matrix(cfg.formation())
    rng = np.random.default_rng(np.random.SeedSequence([5, 0]))
    ref = naive_loop(K, np.arange(7.0), 13, 1e-3, 200, rng, project=True)
    assert out.trajectory.shape == ref.shape
    assert np.allclose(out.trajectory, ref, rtol=1e-12, atol=1e-12)
    assert np.allclose(out.times, np.arange(201) * 1e-3)


def test_scalar_integrator_matches_step_loop():
    out = s.simulate_scalar(ScalarDelayPlant(1.1, 0.05), Ts=0.01, horizon=3.0, burn_in=0.0,
                            mc_runs=1, seed=2, x0=0.7, record_every=1)
    rng = np.random.default_rng(np.random.SeedSequence([2, 0]))
    ref = naive_loop(np.array([[1.1]]), np.array([0.7]), 5, 0.01, 300, rng, project=False)
    assert np.allclose(out.trajectory, ref, rtol=1e-12, atol=1e-12)
    # time average over (0, horizon] of x^2
    assert out.mean_variance == pytest.approx(np.mean(ref[1:, 0] ** 2), rel=1e-12)


def test_determinism_and_seed_sensitivity():
    cfg = ring_config(12, 2, 0.02, horizon=5.0, mc_runs=3, seed=9)
    a = s.simulate_error_dynamics(cfg)
    b = s.simulate_error_dynamics(cfg)
    assert np.array_equal(a.per_run_variance, b.per_run_variance)
    c = s.simulate_error_dynamics(ring_config(12, 2, 0.02, horizon=5.0, mc_runs=3, seed=10))
    assert not np.array_equal(a.per_run_variance, c.per_run_variance)


def test_runs_independent_of_batch():
    # run r uses the same stream whether or not other runs are present
    one = s.simulate_error_dynamics(ring_config(10, 1, 0.01, horizon=2.0, mc_runs=1, seed=4))
    three = s.simulate_error_dynamics(ring_config(10, 1, 0.01, horizon=2.0, mc_runs=3, seed=4))
    assert one.per_run_variance[0] == pytest.approx(three.per_run_variance[0], rel=1e-12)


def test_zero_gain_projected_random_walk():
    N, T = 10, 1.0
    vals = []
    for seed in range(150):
        cfg = s.SimConfig(N=N, gains=(0.0,), tau_n=0.01, Ts=1e-3, horizon=T, burn_in=0.0,
                          mc_runs=1, seed=seed, x0_mode="zero", record_every=1000)
        out = s.simulate_error_dynamics(cfg)
        vals.append(np.sum(out.trajectory[-1] ** 2))
    vals = np.array(vals)
    se = vals.std(ddof=1) / math.sqrt(len(vals))
    assert abs(vals.mean() - (N - 1) * T) <= 4 * se


def test_mean_is_invariant():
    cfg = ring_config(20, 3, 0.05, horizon=10.0, mc_runs=4, seed=1)
    out = s.simulate_error_dynamics(cfg)
    assert out.mean_drift <= 1e-9
    assert out.mean_drift <= 4 * out.stderr


def test_euler_variance_against_closed_form():
    lam = optimal_scalar_gain(1.0).lambda_star
    ref = steady_state_variance(ScalarDelayPlant(lam, 1.0))
    prev = None
    for Ts in (1e-2, 5e-3, 2.5e-3, 1.25e-3):
        v = s.euler_stationary_variance(lam, 1.0, Ts)
        err = v - ref
        if prev is not None:
            # weak order one: the bias roughly halves with the step
            assert 0.4 < err / prev < 0.6
        prev = err
    assert abs(prev) < 2e-3 * ref
    with pytest.raises(ValueError):
        s.euler_stationary_variance(1.6, 1.0, 0.01)


def test_scalar_simulation_vs_discrete_theory():
    lam = 1.2
    out = s.simulate_scalar(ScalarDelayPlant(lam, 1.0), Ts=0.01, horizon=2000.0, mc_runs=20, seed=3)
    exact = s.euler_stationary_variance(lam, 1.0, 0.01)
    assert abs(out.mean_variance - exact) <= 3 * out.stderr


def test_scalar_optimum_simulation():
    lam = optimal_scalar_gain(1.0).lambda_star
    out = s.simulate_scalar(ScalarDelayPlant(lam, 1.0), Ts=1e-3, horizon=2000.0, burn_in=100.0,
                            mc_runs=20, seed=0)
    assert out.mean_variance == pytest.approx(1.5319, rel=0.05)


def test_near_delay_free_scalar():
    out = s.simulate_scalar(ScalarDelayPlant(0.1, 0.01), Ts=1e-3, horizon=2000.0, mc_runs=20, seed=0)
    assert out.mean_variance == pytest.approx(5.0, rel=0.05)
    assert abs(out.mean_variance - s.euler_stationary_variance(0.1, 0.01, 1e-3)) <= 3 * out.stderr


def test_scalar_divergence_report():
    with pytest.raises(DivergenceError) as exc:
        s.simulate_scalar(ScalarDelayPlant(1.6 * 1.5, 1.0), Ts=1e-2, horizon=2000.0, mc_runs=2,
                          record_every=10)
    err = exc.value
    rep = err.report()
    assert rep["status"] == "diverged"
    assert err.norm > s.DIVERGENCE_THRESHOLD
    assert 0 < err.time < 2000.0
    assert err.partial["trajectory"] is not None
    assert err.partial["times"][-1] <= err.time


def test_boundary_gain_diverges():
    with pytest.raises(DivergenceError):
        s.simulate_scalar(ScalarDelayPlant(1.6, 1.0), Ts=1e-2, horizon=4000.0, mc_runs=1)


def test_unstable_ring_diverges():
    p = d.DesignProblem(10, 2, 0.1)
    k = 3 * d.optimize_alpha_exact(p).alpha
    cfg = s.SimConfig(N=10, gains=(k, k), tau_n=0.1, Ts=1e-3, horizon=200.0, mc_runs=2)
    assert s.analytic_variance(cfg) is None
    with pytest.raises(DivergenceError):
        s.estimate_scalar_variance(cfg)


@pytest.mark.parametrize("kw", [
    dict(Ts=0.0),
    dict(Ts=3e-3),                      # 0.02 / 0.003 is not an integer
    dict(burn_in=50.0, horizon=10.0),
    dict(mc_runs=0),
    dict(x0_mode="given"),
    dict(x0_mode="given", x0=(1.0, 2.0)),
    dict(x0_mode="uniform"),
    dict(record_every=0),
])
def test_config_validation(kw):
    base = dict(N=12, gains=(1.0, 1.0), tau_n=0.02)
    base.update(kw)
    with pytest.raises(ConfigError):
        s.SimConfig(**base)


def test_config_domain_checked():
    with pytest.raises(ConfigError):
        s.SimConfig(N=4, gains=(1.0, 1.0), tau_n=0.02)


def test_default_burn_in():
    cfg = ring_config(50, 2, 0.02, horizon=100.0)
    lam = sp.eigenvalues(cfg.formation()).eigenvalues[1:]
    assert cfg.resolved_burn_in() == pytest.approx(min(10 * (0.02 + 1 / lam.min()), 20.0))
    short = ring_config(50, 2, 0.02, horizon=5.0)
    assert short.resolved_burn_in() == pytest.approx(1.0)


def test_outcome_conventions():
    out = s.estimate_scalar_variance(ring_config(12, 2, 0.02, horizon=5.0, mc_runs=3))
    assert out.per_coordinate_variance == out.mean_variance / 12
    assert out.stderr >= 0
    summ = out.summary()
    assert summ["theory_per_coordinate"] == pytest.approx(summ["theory"] / 12)
    single = s.simulate_error_dynamics(ring_config(12, 2, 0.02, horizon=5.0, mc_runs=1))
    assert single.stderr == 0.0


def test_stderr_clt_scaling():
    # one stderr estimate from 16 runs is itself ~18% noisy; average over repetitions
    se16, se32 = [], []
    for rep in range(8):
        se16.append(s.simulate_error_dynamics(ring_config(12, 2, 0.05, horizon=10.0, mc_runs=16,
                                                          seed=100 + rep)).stderr)
        se32.append(s.simulate_error_dynamics(ring_config(12, 2, 0.05, horizon=10.0, mc_runs=32,
                                                          seed=200 + rep)).stderr)
    assert np.mean(se32) / np.mean(se16) == pytest.approx(1 / math.sqrt(2), rel=0.30)


def test_ring_vs_theory_small():
    cfg = ring_config(20, 3, 0.05, horizon=60.0, mc_runs=20, seed=0)
    out = s.estimate_scalar_variance(cfg)
    assert abs(out.mean_variance - out.theory) <= max(3 * out.stderr, 0.05 * out.theory)
    # tighter: the discrete-time value of each mode
    lam = sp.eigenvalues(cfg.formation()).eigenvalues[1:]
    exact = sum(s.euler_stationary_variance(l, 0.05, 1e-3) for l in lam)
    assert abs(out.mean_variance - exact) <= 4 * out.stderr


def test_step_halving():
    lam = optimal_scalar_gain(1.0).lambda_star
    coarse = s.simulate_scalar(ScalarDelayPlant(lam, 1.0), Ts=1e-3, horizon=1000.0, mc_runs=10, seed=1)
    fine = s.simulate_scalar(ScalarDelayPlant(lam, 1.0), Ts=5e-4, horizon=1000.0, mc_runs=10, seed=1)
    assert abs(fine.mean_variance - coarse.mean_variance) < 2 * max(coarse.stderr, fine.stderr)
    # the deterministic part of that change is far below the Monte Carlo error
    shift = s.euler_stationary_variance(lam, 1.0, 1e-3) - s.euler_stationary_variance(lam, 1.0, 5e-4)
    assert abs(shift) < coarse.stderr
