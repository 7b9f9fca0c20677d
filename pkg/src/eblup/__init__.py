"""Empirical best linear unbiased prediction for linear mixed models.

Variance-component estimation (REML/ML) by Fisher scoring on the score
equations, BLUP/EBLUP of mixed effects, second-order MSE estimators with
their bias-correction terms, closed-form Kronecker algebra for balanced
ANOVA designs, and a reproducible Monte Carlo study engine.
"""

from .estimation import FitResult, fit, gls_beta, starting_values
from .exceptions import (
    EblupError,
    EmptyGroup,
    IndexOutOfRange,
    NonPositivePhi,
    NotPositiveDefinite,
    OutsideParameterSpace,
    RankDeficientX,
    SimulationError,
    SingularGram,
    SingularInformation,
    TooFewObservations,
    ZeroBlock,
)
from .kron import (
    BalancedDesign,
    KronCoefficients,
    apply_j_product,
    blup_kron,
    design_matrices,
    expand,
    projection_identity_check,
    sigma_coefficients,
    tau_coefficients,
    to_model,
)
from .likelihood import (
    DerivativeBundle,
    InformationMatrix,
    derivative_bundle,
    effective_dims,
    expected_information,
    hessian,
    ml_score_bias,
    profile_loglik,
    projection_p,
    restricted_loglik,
    score_ml,
    score_reml,
    third_derivatives,
)
from .model import (
    AnovaVC,
    FayHerriot,
    MixedModel,
    NestedError,
    PredictionTarget,
    SigmaVector,
    area_target,
    assemble_sigma,
    build_anova,
    build_fay_herriot,
    build_nested_error,
    sigma_derivative,
    validate_sigma,
)
from .mse import (
    WARN_SINGULAR_INFORMATION,
    DeltaTerms,
    MseReport,
    delta_terms,
    dg1_dsigma,
    g1,
    g2,
    g3,
    g3_data,
    g10,
    mse_estimators,
    mse_true_approx,
)
from .prediction import (
    WARN_BOUNDARY,
    BlupResult,
    blup,
    blup_weights,
    eblup,
    grad_s,
    observation_weights,
)
from .simulation import (
    McConfig,
    McReport,
    QuadraticMomentRecord,
    ScoreMomentRecord,
    quadratic_moment_check,
    run_study,
    score_moment_check,
    simulate_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "AnovaVC",
    "BalancedDesign",
    "BlupResult",
    "DeltaTerms",
    "DerivativeBundle",
    "EblupError",
    "EmptyGroup",
    "FayHerriot",
    "FitResult",
    "IndexOutOfRange",
    "InformationMatrix",
    "KronCoefficients",
    "McConfig",
    "McReport",
    "MixedModel",
    "MseReport",
    "NestedError",
    "NonPositivePhi",
    "NotPositiveDefinite",
    "OutsideParameterSpace",
    "PredictionTarget",
    "QuadraticMomentRecord",
    "RankDeficientX",
    "ScoreMomentRecord",
    "SigmaVector",
    "SimulationError",
    "WARN_BOUNDARY",
    "WARN_SINGULAR_INFORMATION",
    "SingularGram",
    "SingularInformation",
    "TooFewObservations",
    "ZeroBlock",
    "apply_j_product",
    "area_target",
    "assemble_sigma",
    "blup",
    "blup_kron",
    "blup_weights",
    "build_anova",
    "build_fay_herriot",
    "build_nested_error",
    "delta_terms",
    "derivative_bundle",
    "design_matrices",
    "dg1_dsigma",
    "eblup",
    "effective_dims",
    "expand",
    "expected_information",
    "fit",
    "gls_beta",
    "g1",
    "g10",
    "g2",
    "g3",
    "g3_data",
    "grad_s",
    "hessian",
    "ml_score_bias",
    "mse_estimators",
    "mse_true_approx",
    "observation_weights",
    "profile_loglik",
    "projection_identity_check",
    "projection_p",
    "quadratic_moment_check",
    "restricted_loglik",
    "run_study",
    "score_ml",
    "score_moment_check",
    "score_reml",
    "sigma_coefficients",
    "sigma_derivative",
    "simulate_dataset",
    "starting_values",
    "tau_coefficients",
    "third_derivatives",
    "to_model",
    "validate_sigma",
]
