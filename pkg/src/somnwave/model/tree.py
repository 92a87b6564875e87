"""Histogram-binned CART trees grown breadth-first.

Each depth level is evaluated for every open node at once with a single
``np.bincount``, which keeps pure-numpy forests and boosting usable on
realistic epoch counts. Split thresholds lie on bin edges; with fewer
distinct values than bins the edges are midpoints between neighbours and the
split search is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class Binner:
    """Per-feature quantile binning; ``code = #edges < x``."""

    def __init__(self, max_bins=64):
        if not 2 <= max_bins <= 256:
            raise ValueError("max_bins must lie in [2, 256]")
        self.max_bins = max_bins

    def fit(self, X):
        edges = []
        for col in np.asarray(X, dtype=np.float64).T:
            uniq = np.unique(col)
            if uniq.size <= self.max_bins:
                e = (uniq[:-1] + uniq[1:]) / 2
            else:
                qs = np.quantile(col, np.linspace(0, 1, self.max_bins + 1)[1:-1])
                e = np.unique(qs)
            edges.append(e)
        self.edges_ = edges
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        codes = np.empty(X.shape, dtype=np.uint8)
        for j, e in enumerate(self.edges_):
            codes[:, j] = np.searchsorted(e, X[:, j], side="left")
        return codes

    @property
    def n_bins(self):
        return max((e.size + 1 for e in self.edges_), default=1)


@dataclass(eq=False)
class Tree:
    feature: np.ndarray     # int, -1 marks a leaf
    threshold: np.ndarray   # go left when x <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray       # (n_nodes, n_outputs)

    @property
    def n_nodes(self):
        return self.feature.size

    @property
    def depth(self):
        depth = np.zeros(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[node] + 1
                depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def apply(self, X):
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            cur = node[active]
            go_left = X[active, self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, X):
        return self.value[self.apply(X)]


def _gini_score(left, total):
    # left: (..., C, B) cumulative weighted class counts; total: (..., C)
    right = total[..., None] - left
    nl = left.sum(axis=-2)
    nr = right.sum(axis=-2)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = (left ** 2).sum(axis=-2) / nl + (right ** 2).sum(axis=-2) / nr
    parent = (total ** 2).sum(axis=-1) / total.sum(axis=-1)
    return score, parent[..., None], nl, nr


def _mse_score(left, total):
    # channels: 0 = sum of weighted targets, 1 = sum of weights
    right = total[..., None] - left
    gl, nl = left[..., 0, :], left[..., 1, :]
    gr, nr = right[..., 0, :], right[..., 1, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        score = gl ** 2 / nl + gr ** 2 / nr
    parent = total[..., 0] ** 2 / total[..., 1]
    return score, parent[..., None], nl, nr


CRITERIA = {"gini": _gini_score, "mse": _mse_score}


def grow_tree(codes, edges, channels, weights, criterion, max_depth=None,
              max_features=None, min_samples_leaf=1, rng=None, n_bins=None,
              min_gain=1e-12):
    """Grow one tree on binned data.

    Parameters
    ----------
    codes : (n, d) uint8
        Binned features.
    edges : list of arrays
        Bin edges per feature, used to turn bin splits into raw thresholds.
    channels, weights : (n, P) arrays
        Each row adds ``weights[i, p]`` to statistic channel
        ``channels[i, p]``. Gini uses one channel per class; MSE uses
        (target, weight).
    criterion : {"gini", "mse"}
    max_features : int or None
        Features sampled per node (without replacement); None uses all.

    Returns
    -------
    nodes : dict of lists
        Tree structure without values.
    leaf_of : (n,) int
        Leaf reached by each training row (-1 for zero-weight rows).
    importance : (d,) float
        Total weighted impurity decrease per feature.
    """
    score_fn = CRITERIA[criterion]
    n, d = codes.shape
    n_channels = 1 + int(channels.max()) if channels.size else 1
    if criterion == "mse":
        n_channels = 2
    B = n_bins or (1 + int(codes.max()) if codes.size else 1)
    mf = d if max_features is None else max(1, min(int(max_features), d))
    max_depth = np.inf if max_depth is None else max_depth

    feature, threshold, left, right = [-1], [np.nan], [-1], [-1]
    importance = np.zeros(d)

    row_weight = weights.sum(axis=1) if criterion == "gini" else weights[:, 1]
    rows = np.flatnonzero(row_weight > 0)
    leaf_of = np.full(n, -1, dtype=np.int64)
    node_of = np.zeros(rows.size, dtype=np.int64)     # global node id per active row
    open_nodes = np.array([0], dtype=np.int64)
    depth = 0

    while rows.size and open_nodes.size:
        if depth >= max_depth:
            leaf_of[rows] = node_of
            break
        m = open_nodes.size
        lookup = np.full(len(feature), -1, dtype=np.int64)
        lookup[open_nodes] = np.arange(m)
        slot = lookup[node_of]

        if mf < d:
            feats = rng.random((m, d)).argsort(axis=1)[:, :mf]
        else:
            feats = np.broadcast_to(np.arange(d), (m, d))
        sel = codes[rows[:, None], feats[slot]].astype(np.int64)          # (r, mf)
        ch = channels[rows]                                                 # (r, P)
        w = weights[rows]
        base = (slot[:, None] * mf + np.arange(mf)[None, :])                # (r, mf)
        idx = ((base[:, :, None] * n_channels + ch[:, None, :]) * B + sel[:, :, None])
        hist = np.bincount(idx.ravel(), weights=np.broadcast_to(w[:, None, :], idx.shape).ravel(),
                           minlength=m * mf * n_channels * B)
        hist = hist.reshape(m, mf, n_channels, B)
        cum = np.cumsum(hist, axis=-1)
        total = cum[..., -1]
        score, parent, nl, nr = score_fn(cum, total)
        if min_samples_leaf > 1:
            counts = np.bincount((base * B + sel).ravel(), minlength=m * mf * B).reshape(m, mf, B)
            ccum = np.cumsum(counts, axis=-1)
            valid = (ccum >= min_samples_leaf) & (ccum[..., -1:] - ccum >= min_samples_leaf)
        else:
            valid = (nl > 0) & (nr > 0)
        valid &= (nl > 0) & (nr > 0)
        gain = np.where(valid, score - parent, -np.inf)
        flat = gain.reshape(m, -1)
        best = flat.argmax(axis=1)
        best_gain = flat[np.arange(m), best]
        best_f = feats[np.arange(m), best // B]
        best_b = best % B

        split_mask = np.isfinite(best_gain) & (best_gain > min_gain * np.abs(parent[:, 0, 0]))
        child_left = np.full(m, -1, dtype=np.int64)
        child_right = np.full(m, -1, dtype=np.int64)
        for s in np.flatnonzero(split_mask):
            nd = int(open_nodes[s])
            f, b = int(best_f[s]), int(best_b[s])
            feature[nd] = f
            threshold[nd] = float(edges[f][b]) if b < edges[f].size else np.inf
            importance[f] += best_gain[s]
            feature.extend([-1, -1])
            threshold.extend([np.nan, np.nan])
            left.extend([-1, -1])
            right.extend([-1, -1])
            left[nd], right[nd] = len(feature) - 2, len(feature) - 1
            child_left[s], child_right[s] = left[nd], right[nd]

        row_split = split_mask[slot]
        done = ~row_split
        leaf_of[rows[done]] = node_of[done]
        rows, node_of, slot = rows[row_split], node_of[row_split], slot[row_split]
        if not rows.size:
            break
        f_row = best_f[slot]
        go_left = codes[rows, f_row] <= best_b[slot]
        node_of = np.where(go_left, child_left[slot], child_right[slot])
        open_nodes = np.flatnonzero(split_mask)
        open_nodes = np.concatenate([child_left[open_nodes], child_right[open_nodes]])
        depth += 1

    nodes = {
        "feature": np.asarray(feature, dtype=np.int64),
        "threshold": np.asarray(threshold, dtype=np.float64),
        "left": np.asarray(left, dtype=np.int64),
        "right": np.asarray(right, dtype=np.int64),
    }
    return nodes, leaf_of, importance
