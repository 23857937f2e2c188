"""Bayesian inference for CTMCs on countably infinite state spaces.

Likelihoods are estimated without bias by combining monotone truncations of
the state space, doubly monotone matrix-exponential approximations, and a
three-point randomized telescope over a joint refinement sequence; the
resulting estimator drives an exact pseudo-marginal sampler.
"""

from .datasets import Dataset, read_dataset, write_dataset
from .debias import (
    ACCURACY_CAP,
    EstimatorConfig,
    GeometricLaw,
    JointSequence,
    LikelihoodEstimator,
    MonotonicityError,
    OsteResult,
    oste,
    oste_variance,
    stable_log_combine,
)
from .diagnostics import (
    MATRIX_CLASSES,
    bench_expm,
    ess,
    oracle_expm,
    random_rate_matrix,
    truncation_study,
    write_rows_csv,
)
from .expm import (
    ExpmRequest,
    FlopMeter,
    computable_error,
    implicit_square,
    poisson_quantile,
    rows_action,
    select_s_skeletoid,
    select_s_uniformization,
    skeletoid,
    skeletoid_base,
    skeletoid_split,
    uniformization,
)
from .reaction import BUILTIN_MODELS, RateRow, ReactionNetwork, builtin_model
from .sampler import (
    GammaPrior,
    LogNormalPrior,
    Prior,
    Trace,
    multistart,
    read_trace,
    sample_chain,
    write_trace,
)
from .simulate import PathSample, gillespie, sample_dataset
from .statespace import (
    DENSE_LIMIT,
    SeedPathError,
    TruncatedRateMatrix,
    Truncation,
    TruncationLadder,
    assemble,
    grow,
    merge,
    ra_rule_of_thumb,
    seed_path,
    seed_reaction_counts,
    seed_truncation,
)
from .tuning import (
    P_MIN_GRID,
    SIGMA_BAR_GRID,
    ConvergenceProfile,
    TunedConfig,
    estimate_sigma_zeta,
    fit_p,
    grid_select,
    laplace_covariance,
    last_peak,
    map_estimate,
    offset_from_profile,
    profile,
    tune_estimator,
    tune_sigma,
    tuned_config_from_text,
    tuned_config_to_text,
)

__version__ = "0.1.0"

__all__ = [
    "ACCURACY_CAP",
    "assemble",
    "bench_expm",
    "builtin_model",
    "BUILTIN_MODELS",
    "computable_error",
    "ConvergenceProfile",
    "Dataset",
    "DENSE_LIMIT",
    "ess",
    "estimate_sigma_zeta",
    "EstimatorConfig",
    "ExpmRequest",
    "fit_p",
    "FlopMeter",
    "GammaPrior",
    "GeometricLaw",
    "gillespie",
    "grid_select",
    "grow",
    "implicit_square",
    "JointSequence",
    "laplace_covariance",
    "last_peak",
    "LikelihoodEstimator",
    "LogNormalPrior",
    "map_estimate",
    "MATRIX_CLASSES",
    "merge",
    "MonotonicityError",
    "multistart",
    "offset_from_profile",
    "oracle_expm",
    "oste",
    "oste_variance",
    "OsteResult",
    "P_MIN_GRID",
    "PathSample",
    "poisson_quantile",
    "Prior",
    "profile",
    "ra_rule_of_thumb",
    "random_rate_matrix",
    "RateRow",
    "ReactionNetwork",
    "read_dataset",
    "read_trace",
    "rows_action",
    "sample_chain",
    "sample_dataset",
    "seed_path",
    "seed_reaction_counts",
    "seed_truncation",
    "SeedPathError",
    "select_s_skeletoid",
    "select_s_uniformization",
    "SIGMA_BAR_GRID",
    "skeletoid",
    "skeletoid_base",
    "skeletoid_split",
    "stable_log_combine",
    "Trace",
    "TruncatedRateMatrix",
    "Truncation",
    "truncation_study",
    "TruncationLadder",
    "tune_estimator",
    "tune_sigma",
    "tuned_config_from_text",
    "tuned_config_to_text",
    "TunedConfig",
    "uniformization",
    "write_dataset",
    "write_rows_csv",
    "write_trace",
]
