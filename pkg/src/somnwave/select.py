"""Two-stage dimensionality reduction: grouped RFECV, then PCA."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_is_fitted

from somnwave.evaluation import evaluate, kfold_plan, rows_for
from somnwave.exceptions import DegenerateLabels, DimensionMismatch, RankZero
from somnwave.model.base import as_matrix
from somnwave.model.bundle import register
from somnwave.model.forest import RandomForest

logger = logging.getLogger(__name__)


@register
@dataclass(frozen=True)
class SelectionModel:
    selected: tuple                 # original column indices, ascending
    curve: tuple                    # ((n_features, mean macro-F1), ...) in elimination order
    criterion: str = "random_forest_impurity"
    folds: tuple = ()               # test subject ids per fold
    n_features_in: int = 0

    def score_for(self, n_features):
        return dict(self.curve)[n_features]

    def curve_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n_features", "mean_macro_f1"])
            for n, score in self.curve:
                writer.writerow([n, repr(float(score))])
        return Path(path)


def _ranking_forest(params, seed):
    return RandomForest(**params, seed=seed)


def _eliminate(X, y, keep, params, seed, step, stop_at):
    """Run recursive elimination on ``X[:, keep]`` down to ``stop_at`` columns.

    Yields ``(kept_columns, fitted_forest)`` before each elimination. Ties in
    importance drop the later column first.
    """
    keep = list(keep)
    while True:
        forest = _ranking_forest(params, seed).fit(X[:, keep], y)
        yield tuple(keep), forest
        if len(keep) <= stop_at:
            return
        n_drop = min(step, len(keep) - stop_at)
        imp = getattr(forest, "feature_importances_", np.zeros(len(keep)))
        # lexsort: primary key importance ascending, secondary position descending
        order = np.lexsort((-np.arange(len(keep)), imp))
        drop = set(order[:n_drop].tolist())
        keep = [c for i, c in enumerate(keep) if i not in drop]


def rfecv_select(X, y, folds, step=1, forest_params=None, seed=0, groups=None):
    """Recursive feature elimination with subject-grouped cross-validation.

    Parameters
    ----------
    X : (n, d) array
    y : (n,) labels
    folds : list of (train_ids, test_ids)
        Subject-level plan; rows are mapped through ``groups``.
    step : int
        Columns removed per round.
    forest_params : dict, optional
        Hyperparameters of the ranking random forest.
    groups : (n,) subject ids

    Returns
    -------
    SelectionModel
        Keeps the size with the highest mean out-of-fold macro-F1; ties go to
        fewer features.
    """
    X = as_matrix(X)
    y = np.asarray(y)
    classes = np.unique(y)
    if classes.size < 2:
        raise DegenerateLabels("feature selection needs at least two classes")
    if step < 1:
        raise ValueError("step must be >= 1")
    d = X.shape[1]
    params = dict(forest_params or {})
    sizes = []
    scores = {}
    for f, (train_ids, test_ids) in enumerate(folds):
        tr = rows_for(groups, train_ids)
        te = rows_for(groups, test_ids)
        fold_seed = seed + f
        for keep, forest in _eliminate(X[tr], y[tr], range(d), params, fold_seed, step, 1):
            pred = forest.predict(X[te][:, keep])
            score = evaluate(y[te], pred, classes).macro_f1
            scores.setdefault(len(keep), []).append(score)
            if f == 0:
                sizes.append(len(keep))
    curve = tuple((n, float(np.mean(scores[n]))) for n in sizes)
    best_n = min(n for n, s in curve if s == max(s for _, s in curve))
    selected = None
    for keep, _ in _eliminate(X, y, range(d), params, seed, step, best_n):
        selected = keep
    logger.info("RFECV kept %d of %d columns", best_n, d)
    return SelectionModel(
        selected=tuple(sorted(selected)),
        curve=curve,
        folds=tuple(tuple(t) for _, t in folds),
        n_features_in=d,
    )


@register
class RFECVSelector(SelectorMixin, BaseEstimator):
    """Estimator wrapper around :func:`rfecv_select`.

    ``fit`` takes ``groups`` (subject ids); folds are built with
    :func:`kfold_plan` over those groups. Without groups every row is its
    own group.

    Parameters
    ----------
    n_folds : int
    step : int
    n_estimators, max_depth : forest settings for importance ranking
    seed : int
    """

    def __init__(self, n_folds=5, step=1, n_estimators=40, max_depth=12, seed=0):
        self.n_folds = n_folds
        self.step = step
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.seed = seed

    def fit(self, X, y, groups=None):
        X = as_matrix(X)
        y = np.asarray(y)
        if groups is None:
            groups = np.arange(X.shape[0])
        groups = np.asarray(groups, dtype=object)
        n_groups = len(set(groups))
        folds = kfold_plan(groups, k=min(self.n_folds, n_groups), seed=self.seed)
        self.model_ = rfecv_select(
            X, y, folds, step=self.step,
            forest_params={"n_estimators": self.n_estimators, "max_depth": self.max_depth},
            seed=self.seed, groups=groups,
        )
        self.n_features_in_ = X.shape[1]
        self.support_ = np.zeros(X.shape[1], dtype=bool)
        self.support_[list(self.model_.selected)] = True
        self.cv_curve_ = self.model_.curve
        return self

    @classmethod
    def from_model(cls, model):
        sel = cls()
        sel.model_ = model
        sel.n_features_in_ = model.n_features_in
        sel.support_ = np.zeros(model.n_features_in, dtype=bool)
        sel.support_[list(model.selected)] = True
        sel.cv_curve_ = model.curve
        return sel

    def _get_support_mask(self):
        check_is_fitted(self, "support_")
        return self.support_

    def transform(self, X):
        X = as_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return X[:, self._get_support_mask()]


# --- PCA ---------------------------------------------------------------------

@register
@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    scale: np.ndarray
    components: np.ndarray      # (d, d), rows orthonormal, descending eigenvalue
    eigenvalues: np.ndarray
    k: int
    variance_target: float = 0.95
    meta: dict = field(default_factory=dict)

    @property
    def dimension(self):
        return self.mean.size

    @property
    def explained_variance_ratio(self):
        total = self.eigenvalues.sum()
        return self.eigenvalues / total


def _sign_fix(vectors):
    """Flip each row so its first non-negligible entry is positive."""
    out = vectors.copy()
    for row in out:
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if nz.size and row[nz[0]] < 0:
            row *= -1
    return out


def pca_fit(X, variance_target=0.95, standardize=True):
    """Fit PCA on training rows.

    Columns are centered and, with ``standardize``, divided by their sample
    standard deviation (constant columns keep scale 1). Eigenvalues are those
    of the sample covariance (``n - 1`` denominator).
    """
    X = as_matrix(X)
    n, d = X.shape
    if n < 2:
        raise ValueError("PCA needs at least two rows")
    if not 0 < variance_target <= 1:
        raise ValueError("variance_target must lie in (0, 1]")
    mean = X.mean(axis=0)
    Z = X - mean
    scale = np.ones(d)
    if standardize:
        sd = Z.std(axis=0, ddof=1)
        scale = np.where(sd > 0, sd, 1.0)
        Z = Z / scale
    cov = Z.T @ Z / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None)
    total = evals.sum()
    if total <= 1e-12 * max(1.0, float(np.abs(X).max())):
        raise RankZero("all training rows are identical")
    comps = _sign_fix(evecs.T)
    # descending eigenvalue; exact ties resolved by the sign-fixed vectors
    order = sorted(range(d), key=lambda i: (-evals[i], tuple(-comps[i])))
    evals = evals[order]
    comps = comps[order]
    ratio = np.cumsum(evals) / total
    k = int(np.searchsorted(ratio, variance_target - 1e-12) + 1)
    k = min(k, d)
    return PcaModel(mean, scale, comps, evals, k, variance_target,
                    {"standardize": bool(standardize), "n_rows": n})


def pca_transform(model, X, k=None):
    X = as_matrix(X)
    if X.shape[1] != model.dimension:
        raise DimensionMismatch(f"PCA expects {model.dimension} columns, got {X.shape[1]}")
    k = model.k if k is None else k
    return ((X - model.mean) / model.scale) @ model.components[:k].T


def pca_inverse_transform(model, T):
    T = np.asarray(T, dtype=np.float64)
    k = T.shape[1]
    return T @ model.components[:k] * model.scale + model.mean


@register
class PCAReducer(TransformerMixin, BaseEstimator):
    """Standardized PCA keeping the fewest components reaching ``variance_target``."""

    def __init__(self, variance_target=0.95, standardize=True):
        self.variance_target = variance_target
        self.standardize = standardize

    def fit(self, X, y=None):
        self.model_ = pca_fit(X, self.variance_target, self.standardize)
        self.n_features_in_ = self.model_.dimension
        self.n_components_ = self.model_.k
        return self

    @classmethod
    def from_model(cls, model):
        red = cls(model.variance_target, model.meta.get("standardize", True))
        red.model_ = model
        red.n_features_in_ = model.dimension
        red.n_components_ = model.k
        return red

    def transform(self, X):
        check_is_fitted(self, "model_")
        return pca_transform(self.model_, X)

    def inverse_transform(self, T):
        check_is_fitted(self, "model_")
        return pca_inverse_transform(self.model_, T)
