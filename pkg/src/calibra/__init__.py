"""Probability calibration trees with Platt scaling and isotonic regression baselines."""

from .calibrators import (
    IsotonicCalibrator,
    PlattCalibrator,
    apply_isotonic,
    apply_platt,
    assemble_score_vector,
    fit_platt,
    logodds_transform,
    ovr_calibrate,
    pav_fit,
    platt_targets,
)
from .caltree import (
    CalibrationTree,
    PCTCalibrator,
    ScoreRecords,
    best_split,
    calibrate,
    fit_pct,
    grow_tree,
    prune_tree,
)
from .data import (
    Attribute,
    Dataset,
    encode_categorical,
    impute_missing,
    load_dataset,
    stratified_folds,
)
from .evaluation import (
    corrected_ttest,
    expected_cost_decision,
    reliability_bins,
    rmse,
    run_benchmark,
    sign_test,
)
from .learners import collect_scores, fit_boosted, fit_naive_bayes, predict_nb
from .logitboost import (
    AdditiveLogisticModel,
    fit_additive_model,
    logitboost_iterate,
    select_iterations_cv,
    softmax_probs,
)

__all__ = [
    "AdditiveLogisticModel",
    "apply_isotonic",
    "apply_platt",
    "assemble_score_vector",
    "Attribute",
    "best_split",
    "calibrate",
    "CalibrationTree",
    "collect_scores",
    "corrected_ttest",
    "Dataset",
    "encode_categorical",
    "expected_cost_decision",
    "fit_additive_model",
    "fit_boosted",
    "fit_naive_bayes",
    "fit_pct",
    "fit_platt",
    "grow_tree",
    "impute_missing",
    "IsotonicCalibrator",
    "load_dataset",
    "logitboost_iterate",
    "logodds_transform",
    "ovr_calibrate",
    "pav_fit",
    "PCTCalibrator",
    "platt_targets",
    "PlattCalibrator",
    "predict_nb",
    "prune_tree",
    "reliability_bins",
    "rmse",
    "run_benchmark",
    "ScoreRecords",
    "select_iterations_cv",
    "sign_test",
    "softmax_probs",
    "stratified_folds",
]

__version__ = "0.1.0"
