"""Targeted maximum likelihood estimation of treatment effects transported
from a source population to a target population."""
from .config import RunConfig
from .data import (MISSING_OUTCOME, SURVIVAL, Dataset, ObservedRecord, PersonTimeTable, Schema,
                   SurvivalRecord, person_time_expand, read_csv, validate_dataset)
from .dgp import DGPSpec, TruthReport, generate, misspecify, true_values
from .eic import EICDecomposition, clever_covariate_wv, clever_covariate_y, eic_ate, eic_psi_a
from .federated import TargetedModelExport, apply_export, fit_less_aggressive
from .glm import DesignSpec, RegressionFit, fit_linear, fit_logistic
from .nuisance import (HazardFits, NuisanceConfig, NuisanceFits, fit_hazards, fit_nuisances,
                       fit_reduced_regression, predict)
from .report import EstimateReport, FluctuationResult
from .survival import (SurvivalCurves, SurvivalEIC, clever_covariate_h, estimate_survival,
                       ipctw_estimate, survival_eic, target_hazard)
from .tmle import (estimate, exact_remainder_mc, fit_tmle, target_outcome_regression,
                   target_reduced_regression)

__version__ = "0.1.0"

__all__ = [
    "MISSING_OUTCOME", "SURVIVAL", "DGPSpec", "Dataset", "DesignSpec", "EICDecomposition",
    "EstimateReport", "FluctuationResult", "HazardFits", "NuisanceConfig", "NuisanceFits",
    "ObservedRecord", "PersonTimeTable", "RegressionFit", "RunConfig", "Schema",
    "SurvivalCurves", "SurvivalEIC", "SurvivalRecord", "TargetedModelExport", "TruthReport",
    "apply_export", "clever_covariate_h", "clever_covariate_wv", "clever_covariate_y",
    "eic_ate", "eic_psi_a", "estimate", "estimate_survival", "exact_remainder_mc",
    "fit_hazards", "fit_less_aggressive", "fit_linear", "fit_logistic", "fit_nuisances",
    "fit_reduced_regression", "fit_tmle", "generate", "ipctw_estimate", "misspecify",
    "person_time_expand", "predict", "read_csv", "survival_eic", "target_hazard",
    "target_outcome_regression", "target_reduced_regression", "true_values",
    "validate_dataset",
]
