"""Per-diagnosis gradient-boosted classifiers on tabular ECG features.

Cohort handling, stratified 18:1:1 folds, synthetic cohorts, boosting with
early stopping, AUROC with bootstrap intervals, and exact tree Shapley values.
"""
from .attribution import (
    AttributionMatrix,
    beeswarm_export,
    global_importance,
    shap_brute,
    shap_row,
    shap_values,
    tree_expectation,
)
from .boosting import BoostedModel, TrainConfig, grow_tree, predict_margin, predict_proba, train
from .cohort import (
    DEFAULT_SCHEMA,
    CohortTable,
    FeatureSchema,
    FoldAssignment,
    assign_strata,
    load_cohort,
    make_folds,
    prevalence,
    write_cohort,
)
from .metrics import EvalReport, auroc, bootstrap_ci, evaluate
from .synth import CohortSpec, Signal, TargetSpec, bayes_auroc, synth_cohort

__version__ = "0.1.0"

__all__ = [
    "AttributionMatrix", "BoostedModel", "CohortSpec", "CohortTable", "DEFAULT_SCHEMA", "EvalReport",
    "FeatureSchema", "FoldAssignment", "Signal", "TargetSpec", "TrainConfig", "assign_strata", "auroc",
    "bayes_auroc", "beeswarm_export", "bootstrap_ci", "evaluate", "global_importance", "grow_tree",
    "load_cohort", "make_folds", "predict_margin", "predict_proba", "prevalence", "shap_brute", "shap_row",
    "shap_values", "synth_cohort", "train", "tree_expectation", "write_cohort",
]
