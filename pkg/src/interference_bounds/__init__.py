"""Design-based lower bounds on the number of units affected by treatment under interference."""

from .design_core import DesignSpec, ExposureModel, compute_gamma, joint_exposure_prob, marginal_exposure_prob, poisson_binomial_tail
from .errors import BoundsError, ConfigError, DegenerateArmError, PositivityError, ResourceError
from .estimators import ObservedData, hajek_components, phi_hat_vector, tau_contrast
from .exposure import EstimandSpec, NetworkSpec, Variant, network_from_edges, realize_exposures
from .inference import BoundReport, InferenceContext, SolverBudget, analyze, lower_confidence_bound, point_estimate
from .optimizer import BinaryProgram, SolveResult, evaluate_objective, solve_branch_bound, solve_exact
from .simulate import SimConfig, generate_model, ground_truth, run_replications
from .variance import MomentBackend, build_Q, critical_value, threshold_variance

__all__ = [
    "BinaryProgram",
    "BoundReport",
    "BoundsError",
    "ConfigError",
    "DegenerateArmError",
    "DesignSpec",
    "EstimandSpec",
    "ExposureModel",
    "InferenceContext",
    "MomentBackend",
    "NetworkSpec",
    "ObservedData",
    "PositivityError",
    "ResourceError",
    "SimConfig",
    "SolveResult",
    "SolverBudget",
    "Variant",
    "analyze",
    "build_Q",
    "compute_gamma",
    "critical_value",
    "evaluate_objective",
    "generate_model",
    "ground_truth",
    "hajek_components",
    "joint_exposure_prob",
    "lower_confidence_bound",
    "marginal_exposure_prob",
    "network_from_edges",
    "phi_hat_vector",
    "point_estimate",
    "poisson_binomial_tail",
    "realize_exposures",
    "run_replications",
    "solve_branch_bound",
    "solve_exact",
    "tau_contrast",
    "threshold_variance",
]
