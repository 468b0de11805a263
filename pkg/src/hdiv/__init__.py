"""Desparsified IV Lasso: high-dimensional instrumental-variables
estimation with exact KKT certificates, confidence intervals, and a
Monte Carlo harness."""

from .estimator import (
    DecompositionDiag,
    EstimateBundle,
    decompose,
    desparsify,
    fit_iv_lasso,
    omega2_hat,
    omega2_population,
)
from .inference import (
    ConfidenceInterval,
    CovarianceEstimate,
    TestResult,
    confidence_interval,
    estimate_covariance_homoscedastic,
    estimate_covariance_sandwich,
    normal_cdf,
    normal_quantile,
    scaled_lasso_sigma,
    wald_test,
)
from .lasso_core import (
    LassoFit,
    QuadraticLassoProblem,
    check_kkt,
    solve_quadratic_lasso,
    soft_threshold,
)
from .model import (
    DegenerateIdentificationError,
    HdivError,
    IVDataset,
    NumericalError,
    TuningConfig,
    ValidationError,
    validate_dataset,
)
from .regularized_matrices import (
    CrossMomentEstimate,
    PrecisionEstimate,
    StructuralInverseEstimate,
    estimate_precision_nodewise,
    estimate_structural_inverse,
    exact_inverses,
    symmetric_psd_sqrt,
    threshold_cross_moment,
)
from .simulation import (
    MonteCarloSummary,
    SimulationConfig,
    SimulationTruth,
    build_truth,
    run_monte_carlo,
    run_replication,
    sample_dataset,
    tune_penalties,
)
from .tuning import CVConfig, CVResult, cv_iv_lasso_lambda, cv_nodewise_lambda

__version__ = "0.1.0"

__all__ = [
    "CVConfig",
    "CVResult",
    "ConfidenceInterval",
    "CovarianceEstimate",
    "CrossMomentEstimate",
    "DecompositionDiag",
    "DegenerateIdentificationError",
    "EstimateBundle",
    "HdivError",
    "IVDataset",
    "LassoFit",
    "MonteCarloSummary",
    "NumericalError",
    "PrecisionEstimate",
    "QuadraticLassoProblem",
    "SimulationConfig",
    "SimulationTruth",
    "StructuralInverseEstimate",
    "TestResult",
    "TuningConfig",
    "ValidationError",
    "build_truth",
    "check_kkt",
    "confidence_interval",
    "cv_iv_lasso_lambda",
    "cv_nodewise_lambda",
    "decompose",
    "desparsify",
    "estimate_covariance_homoscedastic",
    "estimate_covariance_sandwich",
    "estimate_precision_nodewise",
    "estimate_structural_inverse",
    "exact_inverses",
    "fit_iv_lasso",
    "normal_cdf",
    "normal_quantile",
    "omega2_hat",
    "omega2_population",
    "run_monte_carlo",
    "run_replication",
    "sample_dataset",
    "scaled_lasso_sigma",
    "solve_quadratic_lasso",
    "soft_threshold",
    "symmetric_psd_sqrt",
    "threshold_cross_moment",
    "tune_penalties",
    "validate_dataset",
    "wald_test",
]
