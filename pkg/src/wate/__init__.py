"""Weighted average treatment effect estimation.

The estimand family is tau_h = E[h(X) * (Y(1) - Y(0))] / E[h(X)] for a
nonnegative target function h of the covariates (possibly through the
propensity score). The package provides outcome regression, normalized
inverse probability weighting and augmented/doubly robust estimators for
these targets, a pairs bootstrap for standard errors, and a Monte Carlo
harness for studying bias and RMSE under misspecified working models.
"""

from .bootstrap import (
    BootstrapResult,
    BootstrapSamples,
    EstimationPipeline,
    bootstrap_se,
    bootstrap_vector,
    run_pipeline,
)
from .data import (
    CounterfactualDataset,
    ObservationalDataset,
    load_csv,
    save_csv,
    validate,
)
from .design import (
    DesignSpec,
    MonomialTerm,
    TransformTerm,
    intercept_only,
    main_effects,
    monomial,
    parse_design,
)
from .errors import (
    BootstrapError,
    ConvergenceError,
    DataError,
    DegenerateArmError,
    DesignError,
    EstimationError,
    MissingModelError,
    MissingValueError,
    ModelFitError,
    NegativeTargetError,
    NonBinaryTreatmentError,
    PropensityRequiredError,
    RankDeficiencyError,
    TargetError,
    WateError,
)
from .estimators import (
    Diagnostics,
    EstimatorKind,
    PointEstimate,
    estimate,
    estimate_aipw,
    estimate_atc_dr,
    estimate_atc_regression,
    estimate_att_dr,
    estimate_att_regression,
    estimate_dr_linear_in_pi,
    estimate_ipw_normalized,
    estimate_ipw_unnormalized,
    estimate_regression,
)
from .models import (
    FitOptions,
    OutcomeModel,
    PropensityModel,
    fit_outcome,
    fit_propensity,
    predict_outcome,
    predict_propensity,
    truncate_propensity,
)
from .simulation import (
    CellStats,
    SimulationDesign,
    SimulationReport,
    TrueEstimands,
    WorkingModels,
    generate_dataset,
    outcome_design,
    propensity_design,
    reference_truth,
    run_study,
    treatment_effect,
    true_estimands,
    true_propensity,
    working_model_specs,
)
from .targets import (
    TargetFunction,
    TargetKind,
    WeightVector,
    average_effect,
    compute_weights,
    covariate_target,
    effect_on_controls,
    effect_on_treated,
    evaluate_h,
    linear_in_propensity,
    overlap_effect,
)

__version__ = "0.1.0"

__all__ = [
    "BootstrapError",
    "BootstrapResult",
    "BootstrapSamples",
    "CellStats",
    "ConvergenceError",
    "CounterfactualDataset",
    "DataError",
    "DegenerateArmError",
    "DesignError",
    "DesignSpec",
    "Diagnostics",
    "EstimationError",
    "EstimationPipeline",
    "EstimatorKind",
    "FitOptions",
    "MissingModelError",
    "MissingValueError",
    "ModelFitError",
    "MonomialTerm",
    "NegativeTargetError",
    "NonBinaryTreatmentError",
    "ObservationalDataset",
    "OutcomeModel",
    "PointEstimate",
    "PropensityModel",
    "PropensityRequiredError",
    "RankDeficiencyError",
    "SimulationDesign",
    "SimulationReport",
    "TargetError",
    "TargetFunction",
    "TargetKind",
    "TransformTerm",
    "TrueEstimands",
    "WateError",
    "WeightVector",
    "WorkingModels",
    "average_effect",
    "bootstrap_se",
    "bootstrap_vector",
    "compute_weights",
    "covariate_target",
    "effect_on_controls",
    "effect_on_treated",
    "estimate",
    "estimate_aipw",
    "estimate_atc_dr",
    "estimate_atc_regression",
    "estimate_att_dr",
    "estimate_att_regression",
    "estimate_dr_linear_in_pi",
    "estimate_ipw_normalized",
    "estimate_ipw_unnormalized",
    "estimate_regression",
    "evaluate_h",
    "fit_outcome",
    "fit_propensity",
    "generate_dataset",
    "intercept_only",
    "linear_in_propensity",
    "load_csv",
    "main_effects",
    "monomial",
    "outcome_design",
    "overlap_effect",
    "parse_design",
    "predict_outcome",
    "predict_propensity",
    "propensity_design",
    "reference_truth",
    "run_pipeline",
    "run_study",
    "save_csv",
    "treatment_effect",
    "true_estimands",
    "true_propensity",
    "truncate_propensity",
    "validate",
    "working_model_specs",
]
