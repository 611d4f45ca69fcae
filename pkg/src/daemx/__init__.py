"""Recursive minimax estimation for descriptor systems with rectangular pencils."""

from .canonical import (CanonicalModel, SvdReduction, canonicalize, pull_back, push_forward,
                        svd_reduce)
from .coeffs import limit_coeffs, regularity_check, sub_coeffs
from .estimator import (EstimateReport, ObservabilityReport, optimal_filter, suboptimal_filter,
                        worst_case_error_limit)
from .model import (DaeModel, MatrixFunction, TimeGrid, evaluate, example_model, load_model,
                    validate_model)
from .ode import RiccatiSolution, Trajectory, integrate_linear, integrate_riccati, quadrature
from .oracle import BvpSolution, ibp_residual, solve_regular_bvp, solve_regularized_bvp
from .simulate import ExampleConfig, generate_noise, observe, simulate_example

__version__ = "0.1.0"

__all__ = [
    "BvpSolution", "CanonicalModel", "DaeModel", "EstimateReport", "ExampleConfig",
    "MatrixFunction", "ObservabilityReport", "RiccatiSolution", "SvdReduction", "TimeGrid",
    "Trajectory", "canonicalize", "evaluate", "example_model", "generate_noise",
    "ibp_residual", "integrate_linear", "integrate_riccati", "limit_coeffs", "load_model",
    "observe", "optimal_filter", "pull_back", "push_forward", "quadrature",
    "regularity_check", "simulate_example", "solve_regular_bvp", "solve_regularized_bvp",
    "sub_coeffs", "suboptimal_filter", "svd_reduce", "validate_model",
    "worst_case_error_limit",
]
