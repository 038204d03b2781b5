"""Semiparametric estimation of treatment interaction effects.

The package estimates averaged treatment effects and higher-order
interaction contrasts between discrete treatments, with influence-function
based inference, cross-validated variants, and a relatedness-aware
variance correction for cohorts with related samples.
"""

from .dataset import Dataset, ExtraColumn, TreatmentColumn, load_csv, save_csv
from .errors import ConfigError, DataError, EstimationError
from .estimands import (Estimand, FilterDecision, SignedTerm, expand_estimand,
                        frequency_filter)
from .inference import (DerivedEstimate, HotellingResult,
                        allelic_effect_difference, benjamini_hochberg,
                        delta_method, hotelling, joint_covariance,
                        linear_combination, pvalue, wald_ci, wilson_interval)
from .learners import (LearnerSpec, RidgeLogistic, RidgeMultinomial,
                       RidgeRegression, cv_select, make_learner,
                       stratified_fold_ids)
from .nuisance import (FeaturePlan, NuisanceFit, OutcomeRegression,
                       fit_nuisances, fit_outcome, fit_propensity)
from .relatedness import (GRM, SVPCurve, SVPResult, SVPSelection, compute_grm,
                          genetic_distance, load_genotypes, load_grm, save_grm,
                          select_plateau, svp_ci, svp_curve)
from .rng import rng_for
from .simulation import (GenerativeSpec, OracleOutcome, OraclePropensity,
                         VonMisesReport, ancestral_sample, bootstrap_metrics,
                         evaluate_grid, monte_carlo_truth, null_sample,
                         parse_generative_spec, von_mises_check)
from .targeting import (ESTIMATOR_NAMES, EstimateReport, TargetedEstimator,
                        cv_one_step, cv_tmle, estimate, one_step, plugin, tmle)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "Dataset", "DerivedEstimate", "ESTIMATOR_NAMES",
    "Estimand", "EstimateReport", "EstimationError", "ExtraColumn", "FeaturePlan",
    "FilterDecision", "GRM", "GenerativeSpec", "HotellingResult", "LearnerSpec",
    "NuisanceFit", "OracleOutcome", "OraclePropensity", "OutcomeRegression",
    "RidgeLogistic", "RidgeMultinomial", "RidgeRegression", "SVPCurve",
    "SVPResult", "SVPSelection", "SignedTerm", "TargetedEstimator",
    "TreatmentColumn", "VonMisesReport", "allelic_effect_difference",
    "ancestral_sample", "benjamini_hochberg", "bootstrap_metrics", "compute_grm",
    "cv_one_step", "cv_select", "cv_tmle", "delta_method", "estimate",
    "evaluate_grid", "expand_estimand", "fit_nuisances", "fit_outcome",
    "fit_propensity", "frequency_filter", "genetic_distance", "hotelling",
    "joint_covariance", "linear_combination", "load_csv", "load_genotypes",
    "load_grm", "make_learner", "monte_carlo_truth", "null_sample", "one_step",
    "parse_generative_spec", "plugin", "pvalue", "rng_for", "save_csv",
    "save_grm", "select_plateau", "stratified_fold_ids", "svp_ci", "svp_curve",
    "tmle", "von_mises_check", "wald_ci", "wilson_interval",
]
