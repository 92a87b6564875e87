"""Classifier specs, training entry points and the soft-voting ensemble."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_is_fitted

from somnwave.exceptions import ClassListMismatch, ConfigError, DimensionMismatch
from somnwave.model.base import as_matrix
from somnwave.model.boosting import GradientBoosting
from somnwave.model.forest import RandomForest
from somnwave.model.svm import RbfSvm

KINDS = {
    "random_forest": RandomForest,
    "gradient_boosting": GradientBoosting,
    "svm_rbf": RbfSvm,
}


@dataclass(frozen=True)
class ClassifierSpec:
    kind: str
    hyperparameters: dict = field(default_factory=dict)
    class_weighting: str = "none"
    seed: int = 0

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown classifier kind {self.kind!r}")
        if self.class_weighting not in ("none", "inverse_frequency"):
            raise ConfigError(f"unknown class weighting {self.class_weighting!r}")
        hp = self.hyperparameters
        allowed = set(KINDS[self.kind]().get_params()) - {"class_weighting", "seed"}
        unknown = set(hp) - allowed
        if unknown:
            raise ConfigError(f"{self.kind}: unknown hyperparameters {sorted(unknown)}")
        if hp.get("n_estimators", 1) < 1:
            raise ConfigError("n_estimators (trees) must be >= 1")
        lr = hp.get("learning_rate", 0.1)
        if not 0 < lr <= 1:
            raise ConfigError("learning_rate must lie in (0, 1]")
        if hp.get("C", 1.0) <= 0:
            raise ConfigError("C must be positive")
        gamma = hp.get("gamma", "scale")
        if gamma != "scale" and not float(gamma) > 0:
            raise ConfigError("gamma must be positive")
        return self

    def digest(self):
        text = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()

    def build(self):
        self.validate()
        return KINDS[self.kind](**self.hyperparameters, class_weighting=self.class_weighting,
                                seed=self.seed)


def train_classifier(spec, X, y):
    """Fit the estimator described by ``spec``; returns the fitted estimator."""
    model = spec.build().fit(X, y)
    model.training_meta_ = {"kind": spec.kind, "seed": spec.seed, "spec_hash": spec.digest()}
    return model


def predict_proba(model, X):
    return model.predict_proba(X)


def _check_members(members):
    if len(members) < 2:
        raise ValueError("an ensemble needs at least two members")
    first = members[0].classes_
    for m in members[1:]:
        if m.classes_.shape != first.shape or np.any(m.classes_ != first):
            raise ClassListMismatch(f"class lists differ: {first} vs {m.classes_}")
    return first


def _normalize_weights(weights, n):
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n,) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be non-negative, one per member, not all zero")
    return w / w.sum()


def ensemble_soft_vote(members, weights, X):
    """Weighted mean of member probabilities.

    Returns ``(labels, proba)``; argmax ties go to the earliest class in
    stage order.
    """
    classes = _check_members(members)
    w = _normalize_weights(weights, len(members))
    proba = sum(wi * m.predict_proba(X) for wi, m in zip(w, members))
    proba = proba / proba.sum(axis=1, keepdims=True)
    return classes[np.argmax(proba, axis=1)], proba


class SoftVotingEnsemble(ClassifierMixin, BaseEstimator):
    """Soft-voting combination of classifiers (default: RBF SVM + boosting).

    ``fit`` trains clones of ``estimators`` on the same data.
    """

    def __init__(self, estimators=None, weights=None):
        self.estimators = estimators
        self.weights = weights

    def _default_estimators(self):
        return [("svm", RbfSvm()), ("gb", GradientBoosting())]

    def fit(self, X, y):
        X = as_matrix(X)
        members = self.estimators if self.estimators is not None else self._default_estimators()
        self.estimators_ = [clone(est).fit(X, y) for _, est in members]
        self.names_ = [name for name, _ in members]
        self.classes_ = _check_members(self.estimators_)
        self.weights_ = _normalize_weights(self.weights, len(self.estimators_))
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_fitted(cls, members, weights=None, names=None):
        ens = cls(weights=weights)
        ens.estimators_ = list(members)
        ens.names_ = list(names or [f"m{i}" for i in range(len(members))])
        ens.classes_ = _check_members(ens.estimators_)
        ens.weights_ = _normalize_weights(weights, len(members))
        ens.n_features_in_ = members[0].n_features_in_
        return ens

    def predict_proba(self, X):
        check_is_fitted(self, "estimators_")
        X = as_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return ensemble_soft_vote(self.estimators_, self.weights_, X)[1]

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]
