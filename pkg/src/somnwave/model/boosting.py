"""Multinomial gradient boosting with depth-limited regression trees."""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp, softmax

from somnwave.model.base import StageClassifier
from somnwave.model.tree import Binner, Tree, grow_tree


def _cross_entropy(F, y_idx, w):
    logp = F[np.arange(F.shape[0]), y_idx] - logsumexp(F, axis=1)
    return float(-(w * logp).sum() / w.sum())


class GradientBoosting(StageClassifier):
    """K regression trees per stage fitted to multinomial deviance gradients.

    Leaves take one Newton step, ``(K-1)/K * sum(r) / sum(|r|(1-|r|))``.
    If a shrunken stage would raise the training loss, its step is halved
    (up to ``max_backtracks`` times, then dropped), so ``train_loss_`` never
    increases.

    Parameters
    ----------
    n_estimators : int
        Boosting stages.
    learning_rate : float in (0, 1]
    max_depth : int
    min_samples_leaf : int
    max_bins : int
    class_weighting : {"none", "inverse_frequency"}
    seed : int
        Unused by the deterministic fit; kept for a uniform spec.
    """

    def __init__(self, n_estimators=200, learning_rate=0.1, max_depth=3,
                 min_samples_leaf=1, max_bins=64, max_backtracks=8,
                 class_weighting="none", seed=0):
        self.n_estimators = n_estimators
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.max_bins = max_bins
        self.max_backtracks = max_backtracks
        self.class_weighting = class_weighting
        self.seed = seed

    def _fit(self, X, y_idx, sample_weight):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        n = X.shape[0]
        K = self.classes_.size
        w = sample_weight
        binner = Binner(self.max_bins).fit(X)
        codes = binner.transform(X)
        onehot = np.zeros((n, K))
        onehot[np.arange(n), y_idx] = 1.0

        prior = np.bincount(y_idx, weights=w, minlength=K) / w.sum()
        self.init_score_ = np.log(np.maximum(prior, 1e-12))
        F = np.tile(self.init_score_, (n, 1))
        losses = [_cross_entropy(F, y_idx, w)]
        self.estimators_ = []
        self.stage_scale_ = []
        channels = np.tile([0, 1], (n, 1))
        factor = (K - 1) / K
        for _ in range(self.n_estimators):
            P = softmax(F, axis=1)
            stage_trees = []
            update = np.zeros_like(F)
            for k in range(K):
                r = onehot[:, k] - P[:, k]
                nodes, leaf_of, _ = grow_tree(
                    codes, binner.edges_, channels, np.column_stack([w * r, w]), "mse",
                    max_depth=self.max_depth, min_samples_leaf=self.min_samples_leaf,
                    n_bins=binner.n_bins,
                )
                n_nodes = nodes["feature"].size
                num = np.bincount(leaf_of, weights=w * r, minlength=n_nodes)
                den = np.bincount(leaf_of, weights=w * np.abs(r) * (1 - np.abs(r)),
                                  minlength=n_nodes)
                value = np.zeros(n_nodes)
                np.divide(factor * num, den, out=value, where=den > 1e-12)
                stage_trees.append(Tree(value=value[:, None], **nodes))
                update[:, k] = value[leaf_of]
            scale = self.learning_rate
            for _ in range(self.max_backtracks + 1):
                loss = _cross_entropy(F + scale * update, y_idx, w)
                if loss <= losses[-1]:
                    break
                scale /= 2
            else:
                scale, loss = 0.0, losses[-1]
            F += scale * update
            losses.append(loss)
            self.estimators_.append(stage_trees)
            self.stage_scale_.append(scale)
        self.train_loss_ = np.array(losses)
        self.stage_scale_ = np.array(self.stage_scale_)
        return self

    def decision_function(self, X):
        X = self._check_input(X)
        F = np.tile(self.init_score_, (X.shape[0], 1))
        for scale, trees in zip(self.stage_scale_, self.estimators_):
            if scale == 0:
                continue
            for k, tree in enumerate(trees):
                F[:, k] += scale * tree.predict(X)[:, 0]
        return F

    def _predict_proba(self, X):
        return softmax(self.decision_function(X), axis=1)

    def staged_train_loss(self):
        return self.train_loss_
