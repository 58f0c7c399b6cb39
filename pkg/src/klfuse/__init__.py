"""Heterogeneous fusion of mean-field exponential-family posteriors by KL barycenters."""

from .assignment import (
    brute_force_assignment,
    build_augmented_cost_matrix,
    build_cost_matrix,
    solve_rectangular_assignment,
)
from .exceptions import ConsistencyError, IncompatibleComponentsError, ParameterDomainError
from .expfam import (
    ExpFamComponent,
    NaturalParams,
    barycenter,
    diag_gaussian,
    dirichlet,
    from_natural,
    kl_divergence,
    mc_kl_estimate,
    normal_wishart,
    to_natural,
)
from .fusion import FusionConfig, FusionResult, GlobalModel, KLFusion, fuse, objective
from .localvi import BayesianGMM, GmmPrior, fit_bayesian_gmm
from .metrics import point_to_hull_distance, polytope_hausdorff, size_estimation_error
from .synthgen import SynthConfig, generate_benchmark

__version__ = "0.1.0"

__all__ = [
    "BayesianGMM", "ConsistencyError", "ExpFamComponent", "FusionConfig", "FusionResult",
    "GlobalModel", "GmmPrior", "IncompatibleComponentsError", "KLFusion", "NaturalParams",
    "ParameterDomainError", "SynthConfig", "barycenter", "brute_force_assignment",
    "build_augmented_cost_matrix", "build_cost_matrix", "diag_gaussian", "dirichlet",
    "fit_bayesian_gmm", "from_natural", "fuse", "generate_benchmark", "kl_divergence",
    "mc_kl_estimate", "normal_wishart", "objective", "point_to_hull_distance",
    "polytope_hausdorff", "size_estimation_error", "solve_rectangular_assignment", "to_natural",
]
