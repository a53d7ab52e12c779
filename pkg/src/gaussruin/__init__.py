"""Simultaneous ruin probabilities for multivariate Gaussian risk models."""

__version__ = "0.1.0"

from .asymptotics import (
    AsymptoticReport,
    GFunction,
    asymptotic_report,
    bounds,
    constant_C,
    constant_C_of_L,
    D_of_t,
    dD_at_T,
    endpoint_tail_asymptotic,
    endpoint_tail_exact,
    int_repr,
    ruin_asymptotic,
)
from .gaussprob import Estimate, MvnSpec, orthant_upper, tail_upper, upper_probability
from .model import ModelSpec, StationaryCovariance, VarianceFunction, load_spec, save_spec, validate
from .montecarlo import McConfig, McEstimate, convergence_study, estimate_ruin, estimate_ruin_is, sample_paths
from .qp import QpSolution, solve_pi, solve_pi_enumerate

__all__ = [
    "AsymptoticReport", "GFunction", "asymptotic_report", "bounds", "constant_C", "constant_C_of_L",
    "D_of_t", "dD_at_T", "endpoint_tail_asymptotic", "endpoint_tail_exact", "int_repr", "ruin_asymptotic",
    "Estimate", "MvnSpec", "orthant_upper", "tail_upper", "upper_probability",
    "ModelSpec", "StationaryCovariance", "VarianceFunction", "load_spec", "save_spec", "validate",
    "McConfig", "McEstimate", "convergence_study", "estimate_ruin", "estimate_ruin_is", "sample_paths",
    "QpSolution", "solve_pi", "solve_pi_enumerate",
]
