"""RBF support vector machine: SMO dual solver, one-vs-rest, Platt scaling."""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from somnwave.model.base import StageClassifier

logger = logging.getLogger(__name__)

TAU = 1e-12


class RbfKernel:
    """Lazily evaluated RBF Gram matrix with an LRU column cache.

    The whole matrix is precomputed when it fits in ``cache_bytes``.
    ``rows_evaluated`` counts kernel rows computed (cache misses).
    """

    def __init__(self, X, gamma, cache_bytes=256 * 2 ** 20):
        self.X = X
        self.gamma = gamma
        self.sq = np.einsum("ij,ij->i", X, X)
        n = X.shape[0]
        self.rows_evaluated = 0
        self._full = None
        self._cache = OrderedDict()
        self._max_cols = max(2, cache_bytes // (8 * max(n, 1)))
        if n * n * 8 <= cache_bytes:
            self._full = self._block(X, self.sq)
            self.rows_evaluated = n

    def _block(self, Z, zsq):
        d2 = self.sq[:, None] + zsq[None, :] - 2.0 * (self.X @ Z.T)
        return np.exp(-self.gamma * np.maximum(d2, 0.0))

    def column(self, i):
        if self._full is not None:
            return self._full[:, i]
        col = self._cache.get(i)
        if col is None:
            col = self._block(self.X[i:i + 1], self.sq[i:i + 1])[:, 0]
            self.rows_evaluated += 1
            self._cache[i] = col
            if len(self._cache) > self._max_cols:
                self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(i)
        return col

    def diag(self):
        return np.ones(self.X.shape[0])

    def subset(self, rows):
        sub = RbfKernel.__new__(RbfKernel)
        sub.X = self.X[rows]
        sub.gamma = self.gamma
        sub.sq = self.sq[rows]
        sub.rows_evaluated = 0
        sub._cache = OrderedDict()
        sub._max_cols = self._max_cols
        sub._full = None if self._full is None else self._full[np.ix_(rows, rows)]
        return sub


def rbf(A, B, gamma):
    d2 = (np.einsum("ij,ij->i", A, A)[:, None] + np.einsum("ij,ij->i", B, B)[None, :]
          - 2.0 * A @ B.T)
    return np.exp(-gamma * np.maximum(d2, 0.0))


@dataclass(eq=False)
class BinarySvm:
    """Solution of one binary soft-margin problem (labels +1/-1)."""

    alpha: np.ndarray          # dual variables for all training rows
    y: np.ndarray
    upper: np.ndarray          # per-row box bound C_i
    rho: float
    support: np.ndarray        # indices with alpha > 0
    coef: np.ndarray           # alpha_i * y_i on the support
    kkt_gap: float
    iterations: int
    converged: bool


def smo_solve(kernel, y, upper, tol=1e-3, max_kernel_rows=10 ** 6):
    """Solve ``min 1/2 a'Qa - e'a, 0 <= a_i <= C_i, y'a = 0`` by SMO.

    Working pairs use second-order selection (maximal violating ``i``, then
    the ``j`` with the largest guaranteed objective decrease). Stops when
    the KKT gap ``m(a) - M(a)`` drops below ``tol`` or after
    ``max_kernel_rows`` kernel rows have been computed.
    """
    n = y.size
    y = y.astype(np.float64)
    alpha = np.zeros(n)
    grad = -np.ones(n)
    qd = kernel.diag()
    iterations = 0
    converged = False
    gap = np.inf
    while True:
        ygrad = -y * grad
        up = np.where(y > 0, alpha < upper, alpha > 0)
        low = np.where(y > 0, alpha > 0, alpha < upper)
        if not up.any() or not low.any():
            converged = True
            gap = 0.0
            break
        up_vals = np.where(up, ygrad, -np.inf)
        i = int(np.argmax(up_vals))
        m_val = up_vals[i]
        M_val = np.min(np.where(low, ygrad, np.inf))
        gap = m_val - M_val
        if gap < tol:
            converged = True
            break
        if kernel.rows_evaluated >= max_kernel_rows:
            logger.warning("SMO stopped at kernel-row budget with KKT gap %.3g", gap)
            break
        Ki = kernel.column(i)
        b = m_val - ygrad
        cand = low & (b > 0)
        a = qd[i] + qd - 2.0 * Ki
        a = np.where(a > 0, a, TAU)
        obj = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(obj))
        Kj = kernel.column(j)

        Ci, Cj = upper[i], upper[j]
        ai_old, aj_old = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = qd[i] + qd[j] - 2.0 * Ki[j]
            quad = quad if quad > 0 else TAU
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = -diff
            if diff > Ci - Cj:
                if alpha[i] > Ci:
                    alpha[i] = Ci
                    alpha[j] = Ci - diff
            elif alpha[j] > Cj:
                alpha[j] = Cj
                alpha[i] = Cj + diff
        else:
            quad = qd[i] + qd[j] - 2.0 * Ki[j]
            quad = quad if quad > 0 else TAU
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > Ci:
                if alpha[i] > Ci:
                    alpha[i] = Ci
                    alpha[j] = total - Ci
            elif alpha[j] < 0:
                alpha[j] = 0.0
                alpha[i] = total
            if total > Cj:
                if alpha[j] > Cj:
                    alpha[j] = Cj
                    alpha[i] = total - Cj
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = total
        d_i = alpha[i] - ai_old
        d_j = alpha[j] - aj_old
        # Q[:, t] = y * y_t * K[:, t]
        grad += y * (y[i] * d_i * Ki + y[j] * d_j * Kj)
        iterations += 1

    rho = _rho(alpha, y, grad, upper)
    support = np.flatnonzero(alpha > 0)
    return BinarySvm(alpha, y, upper, rho, support, alpha[support] * y[support],
                     float(gap), iterations, converged)


def _rho(alpha, y, grad, upper):
    yg = y * grad
    at_upper = alpha >= upper
    at_lower = alpha <= 0
    free = ~at_upper & ~at_lower
    if free.any():
        return float(yg[free].mean())
    ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
    lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
    ub = yg[ub_mask].min() if ub_mask.any() else np.inf
    lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
    if not np.isfinite(ub) or not np.isfinite(lb):
        return float(ub if np.isfinite(ub) else lb)
    return float((ub + lb) / 2)


def platt_fit(f, labels, max_iter=100, min_step=1e-10, sigma=1e-12):
    """Fit ``P(y=1|f) = 1 / (1 + exp(A f + B))`` by regularized Newton.

    ``labels`` are booleans (True = positive); targets are smoothed to
    ``(N+ + 1)/(N+ + 2)`` and ``1/(N- + 2)``.
    """
    f = np.asarray(f, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = labels.sum()
    n_neg = labels.size - n_pos
    hi = (n_pos + 1.0) / (n_pos + 2.0)
    lo = 1.0 / (n_neg + 2.0)
    t = np.where(labels, hi, lo)
    A = 0.0
    B = math.log((n_neg + 1.0) / (n_pos + 1.0))

    def objective(A, B):
        fApB = f * A + B
        return float(np.sum(np.where(fApB >= 0, t * fApB + np.log1p(np.exp(-fApB)),
                                     (t - 1) * fApB + np.log1p(np.exp(fApB)))))

    fval = objective(A, B)
    for _ in range(max_iter):
        fApB = f * A + B
        p = np.where(fApB >= 0, np.exp(-fApB) / (1 + np.exp(-fApB)),
                     1 / (1 + np.exp(np.minimum(fApB, 700))))
        q = 1 - p
        d2 = p * q
        h11 = sigma + np.dot(f * f, d2)
        h22 = sigma + d2.sum()
        h21 = np.dot(f, d2)
        d1 = t - p
        g1 = np.dot(f, d1)
        g2 = d1.sum()
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB
        step = 1.0
        while step >= min_step:
            newA, newB = A + step * dA, B + step * dB
            newf = objective(newA, newB)
            if newf < fval + 1e-4 * step * gd:
                A, B, fval = newA, newB, newf
                break
            step /= 2
        else:
            break
    return A, B


def platt_predict(f, A, B):
    fApB = np.asarray(f) * A + B
    return np.where(fApB >= 0, np.exp(-fApB) / (1 + np.exp(-fApB)),
                    1 / (1 + np.exp(np.minimum(fApB, 700))))


def _stratified_folds(labels, k, rng):
    folds = np.empty(labels.size, dtype=np.int64)
    for value in np.unique(labels):
        idx = np.flatnonzero(labels == value)
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = np.arange(idx.size) % k
    return folds


class RbfSvm(StageClassifier):
    """One-vs-rest soft-margin RBF SVM with Platt-calibrated probabilities.

    Parameters
    ----------
    C : float
    gamma : float or "scale"
        ``"scale"`` uses ``1 / (d * X.var())``.
    tol : float
        KKT-gap stopping tolerance.
    max_kernel_rows : int
        Kernel-row budget per binary problem.
    calibration_folds : int
        Internal folds producing out-of-fold decision values for Platt fits.
    """

    def __init__(self, C=1.0, gamma="scale", tol=1e-3, max_kernel_rows=10 ** 6,
                 calibration_folds=3, cache_mb=256, class_weighting="none", seed=0):
        self.C = C
        self.gamma = gamma
        self.tol = tol
        self.max_kernel_rows = max_kernel_rows
        self.calibration_folds = calibration_folds
        self.cache_mb = cache_mb
        self.class_weighting = class_weighting
        self.seed = seed

    def _gamma(self, X):
        if self.gamma == "scale":
            var = X.var()
            return 1.0 / (X.shape[1] * var) if var > 0 else 1.0
        return float(self.gamma)

    def _fit(self, X, y_idx, sample_weight):
        if not self.C > 0:
            raise ValueError("C must be positive")
        self.gamma_ = self._gamma(X)
        if not self.gamma_ > 0:
            raise ValueError("gamma must be positive")
        kernel = RbfKernel(X, self.gamma_, int(self.cache_mb * 2 ** 20))
        upper = self.C * sample_weight
        rng = np.random.default_rng(np.random.SeedSequence(self.seed))
        K = self.classes_.size
        # binary case: one problem, class 1 positive
        targets = [1] if K == 2 else list(range(K))
        self.support_vectors_ = []
        self.dual_coef_ = []
        self.intercept_ = []
        self.platt_ = []
        self.binary_ = []
        for k in targets:
            yk = np.where(y_idx == k, 1.0, -1.0)
            sol = smo_solve(kernel, yk, upper, self.tol, self.max_kernel_rows)
            self.binary_.append(sol)
            self.support_vectors_.append(X[sol.support])
            self.dual_coef_.append(sol.coef)
            self.intercept_.append(-sol.rho)
            self.platt_.append(self._calibrate(X, kernel, yk, upper, rng))
        self.platt_ = np.array(self.platt_)
        self.intercept_ = np.array(self.intercept_)
        return self

    def _calibrate(self, X, kernel, yk, upper, rng):
        n = yk.size
        k = min(self.calibration_folds, int(min((yk > 0).sum(), (yk < 0).sum())))
        if k < 2:
            # too few examples of one side for held-out folds; fit in-sample
            sol = smo_solve(kernel, yk, upper, self.tol, self.max_kernel_rows)
            dec = self._binary_decision(X, X[sol.support], sol.coef, -sol.rho)
            return platt_fit(dec, yk > 0)
        folds = _stratified_folds(yk, k, rng)
        dec = np.empty(n)
        for f in range(k):
            train = np.flatnonzero(folds != f)
            test = np.flatnonzero(folds == f)
            sub = kernel.subset(train)
            sol = smo_solve(sub, yk[train], upper[train], self.tol, self.max_kernel_rows)
            sv = train[sol.support]
            dec[test] = self._binary_decision(X[test], X[sv], sol.coef, -sol.rho)
        return platt_fit(dec, yk > 0)

    def _binary_decision(self, X, sv, coef, intercept):
        if sv.shape[0] == 0:
            return np.full(X.shape[0], intercept)
        out = np.empty(X.shape[0])
        step = 4096
        for start in range(0, X.shape[0], step):
            block = X[start:start + step]
            out[start:start + step] = rbf(block, sv, self.gamma_) @ coef + intercept
        return out

    def decision_function(self, X):
        X = self._check_input(X)
        return np.column_stack([
            self._binary_decision(X, sv, coef, b)
            for sv, coef, b in zip(self.support_vectors_, self.dual_coef_, self.intercept_)
        ])

    def _predict_proba(self, X):
        dec = self.decision_function(X)
        probs = np.column_stack([platt_predict(dec[:, i], A, B)
                                 for i, (A, B) in enumerate(self.platt_)])
        if probs.shape[1] == 1:
            return np.column_stack([1 - probs[:, 0], probs[:, 0]])
        return probs
