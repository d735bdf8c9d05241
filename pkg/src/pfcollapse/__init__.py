"""Monte Carlo laboratory for importance-weight collapse in high-dimensional
Gaussian particle filters.

The package implements the single Gaussian Bayes update of a bootstrap
particle filter in canonical (rotated) coordinates, plus a replicated
experiment harness that measures how the maximum normalized importance
weight approaches 1 as the effective dimension of the observation grows,
and a sequential linear-Gaussian filter with an exact Kalman oracle.
"""

__version__ = "0.1.0"

from .spectrum import (
    ObservationModel,
    Spectrum,
    SpectrumFamily,
    canonicalize,
    effective_dimension,
    generate_spectrum,
)
from .rng import CanonicalObservation, Ensemble, RngStream, derive_stream, draw_ensemble, draw_observation
from .weights import (
    PosteriorMoments,
    UnnormalizedWeights,
    WeightSummary,
    exact_posterior,
    log_unnormalized_weights,
    lyapunov_quotient,
    normalize,
    score_statistics,
    t_statistic,
    tau_squared,
    tau_squared_unnormalized,
    u_weights,
    weight_summary,
)
from .errors import BudgetError, ValidationError
from .harness import (
    DEFAULT_BUDGET,
    CellResult,
    ExperimentConfig,
    LyapunovResult,
    NoCollapseResult,
    NormalityResult,
    TEST_FUNCTIONS,
    run_collapse_sweep,
    run_lyapunov_check,
    run_no_collapse_check,
    run_normality_check,
    run_scaling_check,
)

__all__ = [
    "BudgetError",
    "CanonicalObservation",
    "CellResult",
    "DEFAULT_BUDGET",
    "Ensemble",
    "ExperimentConfig",
    "LyapunovResult",
    "NoCollapseResult",
    "NormalityResult",
    "TEST_FUNCTIONS",
    "ObservationModel",
    "PosteriorMoments",
    "RngStream",
    "Spectrum",
    "SpectrumFamily",
    "UnnormalizedWeights",
    "ValidationError",
    "WeightSummary",
    "canonicalize",
    "derive_stream",
    "draw_ensemble",
    "draw_observation",
    "effective_dimension",
    "exact_posterior",
    "generate_spectrum",
    "log_unnormalized_weights",
    "lyapunov_quotient",
    "normalize",
    "run_collapse_sweep",
    "run_lyapunov_check",
    "run_no_collapse_check",
    "run_normality_check",
    "run_scaling_check",
    "score_statistics",
    "t_statistic",
    "tau_squared",
    "tau_squared_unnormalized",
    "u_weights",
    "weight_summary",
]
