"""warpmix: simultaneous registration and modeling of functional data.

A numpy/scipy library for hierarchical mixed-effects analysis of misaligned
curves: spline templates with participant deviations, random time warps at
two levels, serially correlated amplitude noise, template-based
classification with dynamic-time-warping baselines, and a latent factor
model for repeated multivariate movement paths.
"""
from .__about__ import __version__
from .basis import SplineBasis
from .classify import (
    ASYMMETRIC,
    SAKOE_CHIBA,
    SYMMETRIC,
    ClassificationResult,
    CvResult,
    DtwResult,
    DtwTemplate,
    StepPattern,
    TrainedClassifier,
    classify,
    cross_validate,
    default_spec,
    dtw_align,
    dtw_template,
    resample_to_grid,
    train_classifier,
)
from .data import (
    ConditionDataset,
    FunctionalSample,
    RawTrajectory,
    acceleration_profile,
    ingest_csv,
    normalize,
    to_sample,
)
from .errors import ConfigError, DataError, NumericsError, WarpmixError
from .factor import (
    FactorDesign,
    FactorModel,
    PathTensor,
    fit_factor,
    fit_height_models,
    loading_shares,
    lrt_linear_height,
    prediction_ellipsoid,
    resample_path,
    squarem_step,
    variance_decomposition,
)
from .kernels import (
    BridgeKernel,
    MaternKernel,
    MotionKernel,
    SpdFactor,
    build_cov,
    kernel_eval,
    matern_correlation,
)
from .model import (
    FittedModel,
    LinearizedSystem,
    ModelSpec,
    estimate_phi,
    estimate_theta,
    fit,
    laplace_nll,
    linearize,
    optimize_warps,
    posterior_distance,
    profiled_laplace_nll,
    warp_posterior,
)
from .numerics import (
    MinimizeResult,
    OptimizerSettings,
    bounded_minimize,
    chi2_cdf,
    chi2_quantile,
    regularized_lower_gamma,
)
from .sim import (
    RecoveryRecord,
    RecoveryReport,
    SimDesign,
    SimDraws,
    SimTruth,
    recovery_study,
    simulate_dataset,
)
from .warps import WarpConfig, enforce_homeomorphism, eval_warp, warp_jacobian

__all__ = [
    "__version__",
    "ASYMMETRIC",
    "BridgeKernel",
    "ClassificationResult",
    "ConditionDataset",
    "ConfigError",
    "CvResult",
    "DataError",
    "DtwResult",
    "DtwTemplate",
    "FactorDesign",
    "FactorModel",
    "FittedModel",
    "FunctionalSample",
    "LinearizedSystem",
    "MaternKernel",
    "MinimizeResult",
    "ModelSpec",
    "MotionKernel",
    "NumericsError",
    "OptimizerSettings",
    "PathTensor",
    "RawTrajectory",
    "RecoveryRecord",
    "RecoveryReport",
    "SAKOE_CHIBA",
    "SYMMETRIC",
    "SimDesign",
    "SimDraws",
    "SimTruth",
    "SpdFactor",
    "SplineBasis",
    "StepPattern",
    "TrainedClassifier",
    "WarpConfig",
    "WarpmixError",
    "acceleration_profile",
    "bounded_minimize",
    "build_cov",
    "chi2_cdf",
    "chi2_quantile",
    "classify",
    "cross_validate",
    "default_spec",
    "dtw_align",
    "dtw_template",
    "enforce_homeomorphism",
    "estimate_phi",
    "estimate_theta",
    "eval_warp",
    "fit",
    "fit_factor",
    "fit_height_models",
    "ingest_csv",
    "kernel_eval",
    "laplace_nll",
    "linearize",
    "loading_shares",
    "lrt_linear_height",
    "matern_correlation",
    "normalize",
    "optimize_warps",
    "posterior_distance",
    "prediction_ellipsoid",
    "profiled_laplace_nll",
    "regularized_lower_gamma",
    "resample_path",
    "resample_to_grid",
    "simulate_dataset",
    "squarem_step",
    "to_sample",
    "variance_decomposition",
    "warp_jacobian",
    "warp_posterior",
]
