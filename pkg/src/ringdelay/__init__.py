"""Minimum-variance feedback design for ring formations with delayed communication."""

__version__ = "0.1.0"

from .delay_core import (
    ScalarDelayPlant,
    ScalarOptimum,
    fundamental_solution_eval,
    fundamental_variance_integral,
    is_stable,
    optimal_scalar_gain,
    steady_state_variance,
)
from .design import (
    DesignProblem,
    DesignResult,
    near_optimal_alpha,
    near_optimal_gains_multi,
    optimize_alpha_exact,
    optimize_gains_exact,
    relative_error,
    scalar_variance_of_gains,
)
from .sde_sim import SimConfig, SimOutcome, estimate_scalar_variance, simulate_scalar
from .spectral import RingFormation, build_feedback_matrix, eigenvalues, unit_eigenvalues
from .topology import DelayRate, coefficient_C_star, optimize_topology
