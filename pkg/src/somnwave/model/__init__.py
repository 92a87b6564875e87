"""From-scratch classifiers and the SVM + gradient-boosting ensemble."""

from somnwave.model.boosting import GradientBoosting
from somnwave.model.ensemble import (
    ClassifierSpec,
    SoftVotingEnsemble,
    ensemble_soft_vote,
    predict_proba,
    train_classifier,
)
from somnwave.model.forest import RandomForest
from somnwave.model.svm import RbfSvm

__all__ = [
    "ClassifierSpec",
    "GradientBoosting",
    "RandomForest",
    "RbfSvm",
    "SoftVotingEnsemble",
    "ensemble_soft_vote",
    "predict_proba",
    "train_classifier",
]
