"""Random forest of bagged Gini CART trees."""

from __future__ import annotations

import math

import numpy as np

from somnwave.model.base import StageClassifier
from somnwave.model.tree import Binner, Tree, grow_tree


class RandomForest(StageClassifier):
    """Bootstrap-aggregated CART trees with ``sqrt(d)`` features per split.

    Parameters
    ----------
    n_estimators : int
    max_depth : int or None
        ``None`` grows trees until leaves are pure.
    max_features : "sqrt", int or None
    min_samples_leaf : int
    bootstrap : bool
    max_bins : int
        Histogram bins per feature for split search.
    class_weighting : {"none", "inverse_frequency"}
    seed : int
    """

    def __init__(self, n_estimators=300, max_depth=None, max_features="sqrt",
                 min_samples_leaf=1, bootstrap=True, max_bins=64,
                 class_weighting="none", seed=0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.max_features = max_features
        self.min_samples_leaf = min_samples_leaf
        self.bootstrap = bootstrap
        self.max_bins = max_bins
        self.class_weighting = class_weighting
        self.seed = seed

    def _n_split_features(self, d):
        if self.max_features == "sqrt":
            return max(1, int(math.sqrt(d)))
        if self.max_features is None:
            return d
        return max(1, min(int(self.max_features), d))

    def _fit(self, X, y_idx, sample_weight):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        n, d = X.shape
        K = self.classes_.size
        binner = Binner(self.max_bins).fit(X)
        codes = binner.transform(X)
        mf = self._n_split_features(d)
        streams = np.random.SeedSequence(self.seed).spawn(self.n_estimators)
        self.estimators_ = []
        importances = np.zeros(d)
        for ss in streams:
            rng = np.random.default_rng(ss)
            if self.bootstrap:
                mult = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64)
            else:
                mult = np.ones(n)
            w = (mult * sample_weight)[:, None]
            nodes, leaf_of, imp = grow_tree(
                codes, binner.edges_, y_idx[:, None], w, "gini",
                max_depth=self.max_depth, max_features=mf,
                min_samples_leaf=self.min_samples_leaf, rng=rng, n_bins=binner.n_bins,
            )
            used = leaf_of >= 0
            value = np.zeros((nodes["feature"].size, K))
            np.add.at(value, (leaf_of[used], y_idx[used]), w[used, 0])
            sums = value.sum(axis=1, keepdims=True)
            np.divide(value, sums, out=value, where=sums > 0)
            self.estimators_.append(Tree(value=value, **nodes))
            if imp.sum() > 0:
                importances += imp / imp.sum()
        self.feature_importances_ = importances / self.n_estimators
        return self

    def _predict_proba(self, X):
        proba = np.zeros((X.shape[0], self.classes_.size))
        for tree in self.estimators_:
            proba += tree.predict(X)
        return proba / len(self.estimators_)
