"""Conditionally calibrated cutoffs for claim filtering and prediction
intervals.

The pieces compose in one line of flow: score each calibration unit
(claim set or residual), fit a pinball regression augmented with the test
point, and read the cutoff off the fit. Levels can adapt per point, and
score parameters can be boosted through the cutoff's gradient.
"""

from .boosting import (
    AdamState,
    BoostConfig,
    BoostResult,
    ClaimBoostData,
    ConditionalBooster,
    RegressionBoostData,
    adam_step,
    conditional_boost,
    marginal_boost,
    tau_gradient,
)
from .conformal import (
    ControlEvent,
    Cutoff,
    CutoffCalibrator,
    Interval,
    augmented_solve,
    control_event,
    cutoff_nonrandomized,
    cutoff_randomized,
    impute_sentinels,
    imputed_dual_weight,
    predict_interval,
)
from .data import (
    Claim,
    ClaimDataset,
    ClaimRecord,
    atomic_write_text,
    dump_claims,
    load_claims,
)
from .evaluation import (
    RetentionSummary,
    TrialPlan,
    WeightedCoverage,
    calibration_curve,
    coverage_by_group,
    retention_stats,
    shift_weighted_coverage,
    synth_claims,
    synth_gaussian_alpha,
    synth_hetero,
)
from .exceptions import (
    AugmentWarning,
    ClaimcalError,
    DegenerateDesignError,
    DegenerateScoreError,
    EmptyDataWarning,
    InsufficientDataError,
    SingularBasisError,
    UnboundedCutoffWarning,
    ValidationError,
)
from .levels import (
    IntervalLengthAtMost,
    LevelFunction,
    LevelFunctionEstimator,
    RetentionAtLeast,
    alpha_star,
    augment_features,
    estimate_level_function,
)
from .qr import QRSolution, basis_interpolator, dither, pinball_loss, solve_pinball_qr
from .scores import (
    AbsResidualScore,
    LinearClaimEnsemble,
    MonotoneLoss,
    ScaledResidualScore,
    ScoredClaimSet,
    filter_claims,
    score_from_loss,
    smoothed_keep,
)
from .seeding import derive_rng, derive_seed

__version__ = "0.1.0"

__all__ = [
    "AbsResidualScore",
    "AdamState",
    "AugmentWarning",
    "BoostConfig",
    "BoostResult",
    "Claim",
    "ClaimBoostData",
    "ClaimDataset",
    "ClaimRecord",
    "ClaimcalError",
    "ConditionalBooster",
    "ControlEvent",
    "Cutoff",
    "CutoffCalibrator",
    "DegenerateDesignError",
    "DegenerateScoreError",
    "EmptyDataWarning",
    "InsufficientDataError",
    "Interval",
    "IntervalLengthAtMost",
    "LevelFunction",
    "LevelFunctionEstimator",
    "LinearClaimEnsemble",
    "MonotoneLoss",
    "QRSolution",
    "RegressionBoostData",
    "RetentionAtLeast",
    "RetentionSummary",
    "ScaledResidualScore",
    "ScoredClaimSet",
    "SingularBasisError",
    "TrialPlan",
    "UnboundedCutoffWarning",
    "ValidationError",
    "WeightedCoverage",
    "adam_step",
    "alpha_star",
    "atomic_write_text",
    "augment_features",
    "augmented_solve",
    "basis_interpolator",
    "calibration_curve",
    "conditional_boost",
    "control_event",
    "coverage_by_group",
    "cutoff_nonrandomized",
    "cutoff_randomized",
    "derive_rng",
    "derive_seed",
    "dither",
    "dump_claims",
    "estimate_level_function",
    "filter_claims",
    "impute_sentinels",
    "imputed_dual_weight",
    "load_claims",
    "marginal_boost",
    "pinball_loss",
    "predict_interval",
    "retention_stats",
    "score_from_loss",
    "shift_weighted_coverage",
    "smoothed_keep",
    "solve_pinball_qr",
    "synth_claims",
    "synth_gaussian_alpha",
    "synth_hetero",
    "tau_gradient",
]
