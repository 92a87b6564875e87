"""Shared validation and class handling for the from-scratch classifiers."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from somnwave.exceptions import DimensionMismatch, NonFiniteInput


def as_matrix(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D feature matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteInput("feature matrix contains NaN or Inf")
    return X


def class_weights(y_idx, n_classes, mode):
    """Per-class weights: ``none`` or ``inverse_frequency`` (n / (K * n_c))."""
    if mode in (None, "none"):
        return np.ones(n_classes)
    if mode != "inverse_frequency":
        raise ValueError(f"unknown class weighting {mode!r}")
    counts = np.bincount(y_idx, minlength=n_classes).astype(np.float64)
    return y_idx.size / (n_classes * np.maximum(counts, 1))


class StageClassifier(ClassifierMixin, BaseEstimator):
    """Common fit/predict plumbing.

    Subclasses implement ``_fit(X, y_idx, sample_weight)`` and
    ``_predict_proba(X)``; single-class training data yields a constant
    predictor.
    """

    def fit(self, X, y):
        X = as_matrix(X)
        y = np.asarray(y)
        if y.shape[0] != X.shape[0]:
            raise DimensionMismatch(f"{X.shape[0]} rows but {y.shape[0]} labels")
        if X.shape[0] == 0:
            raise ValueError("cannot fit on zero rows")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        cw = class_weights(y_idx, self.classes_.size, getattr(self, "class_weighting", "none"))
        if self.classes_.size == 1:
            self.constant_ = True
            return self
        self.constant_ = False
        self._fit(X, y_idx, cw[y_idx])
        return self

    def _check_input(self, X):
        check_is_fitted(self, "classes_")
        X = as_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(
                f"model was trained on {self.n_features_in_} features, got {X.shape[1]}"
            )
        return X

    def predict_proba(self, X):
        X = self._check_input(X)
        if self.constant_:
            return np.ones((X.shape[0], 1))
        proba = self._predict_proba(X)
        proba = np.clip(proba, 0.0, None)
        sums = proba.sum(axis=1, keepdims=True)
        bad = sums[:, 0] <= 0
        proba[bad] = 1.0
        sums[bad] = proba.shape[1]
        return proba / sums

    def predict(self, X):
        proba = self.predict_proba(X)
        # argmax takes the first maximum: ties resolve to the earliest stage
        return self.classes_[np.argmax(proba, axis=1)]
