"""Functional de-biased estimation of co-heritability in sparse linear models."""

from .core import (
    CoheritError,
    GramView,
    InvalidRhoError,
    NoConvergenceError,
    RegressionSample,
    RngStream,
    ZeroColumnError,
    sample_gaussian_ar1,
    standardize_columns,
)
from .functionals import (
    METHODS,
    CoheritabilityEstimate,
    FDEConfig,
    TraitModel,
    debias_coefficients,
    estimate_inner_fde,
    estimate_methods,
    estimate_quadratic_fde,
    estimate_ratio_fde,
    plugin_estimates,
    threshold_coefficients,
)
from .kernels import BACKEND
from .projection import ProjectionDirection, find_projection, solve_dual_penalized
from .simulation import (
    PRESETS,
    ExperimentConfig,
    ExperimentReport,
    marginal_t_stats,
    run_experiment,
    run_preset,
)
from .sqrt_lasso import ScaledLassoFit, fit_scaled_lasso, lasso_weighted_cd

__version__ = "0.1.0"
