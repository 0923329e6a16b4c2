"""Symmetric exclusion with heavy-tailed jumps and boundary reservoirs.

Simulation, exact density evolution and numerical fractional operators.
"""
from .errors import ConfigError, DomainError, NumericalError, SupportError
from .evolution import (
    DensityProfile,
    DensityTrajectory,
    RegimeLabel,
    TestFunction,
    classify_regime,
    drift,
    integrate,
    reaction_solution,
    stationary_profile,
    weak_residual,
)
from .kernel import JumpKernel, ModelParams, Variant, continuum_rates, normalization_constant, time_scale
from .observables import (
    ReplicaEnsemble,
    block_average,
    boundary_gap_statistic,
    discrete_energy,
    empirical_pairing,
    ensemble_mean_profile,
)
from .operators import (
    QuadratureSpec,
    SmoothFunction,
    boundary_frac_derivative,
    discrete_generator,
    frac_laplacian_kappa,
    integration_by_parts_residual,
    operator_convergence_error,
    regional_frac_laplacian,
    seminorm_pairing,
)
from .process import Configuration, build_rate_table, sample_initial, simulate, step, variant_rates

__version__ = "0.1.0"
