"""Probe regressors used by the DCI metrics.

Both probes follow the scikit-learn estimator protocol and fit one predictor
per target column. ``feature_importances_`` has shape (n_features, n_targets)
with every non-degenerate column normalized to sum to one.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.dummy import DummyRegressor
from sklearn.linear_model import Lasso
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from hfs_lab.exceptions import ConfigurationError


def _as_2d_targets(Y):
    Y = np.asarray(Y, dtype=np.float64)
    return (Y[:, None], True) if Y.ndim == 1 else (Y, False)


def _normalize_columns(raw):
    total = raw.sum(axis=0)
    out = np.zeros_like(raw)
    nz = total > 0
    out[:, nz] = raw[:, nz] / total[nz]
    return out


class _Tree:
    """Depth-limited regression tree stored as flat arrays over binned features."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self):
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def add_node(self, value):
        self.feature.append(-1)
        self.threshold.append(0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.value) - 1

    def freeze(self):
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.threshold = np.asarray(self.threshold, dtype=np.int64)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.value = np.asarray(self.value, dtype=np.float64)
        return self

    def predict_binned(self, Xb):
        node = np.zeros(Xb.shape[0], dtype=np.int64)
        rows = np.arange(Xb.shape[0])
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return self.value[node]
            go_left = Xb[rows[inner], f[inner]] <= self.threshold[node[inner]]
            node[inner] = np.where(go_left, self.left[node[inner]], self.right[node[inner]])


def _best_split(Xb, residual, idx, n_bins, min_samples_leaf):
    """Best split of ``idx`` by SSE reduction.

    Returns (gain, feature, threshold_bin, tied) where ``tied`` lists every
    feature reaching the best gain; the split itself uses the first of them.
    """
    r = residual[idx]
    n = len(idx)
    total = r.sum()
    parent = total * total / n
    per_feature = np.full(Xb.shape[1], -np.inf)
    thresholds = np.zeros(Xb.shape[1], dtype=np.int64)
    for f in range(Xb.shape[1]):
        codes = Xb[idx, f]
        cnt = np.bincount(codes, minlength=n_bins).astype(np.float64)
        s = np.bincount(codes, weights=r, minlength=n_bins)
        cl = np.cumsum(cnt)[:-1]
        sl = np.cumsum(s)[:-1]
        cr = n - cl
        sr = total - sl
        ok = (cl >= min_samples_leaf) & (cr >= min_samples_leaf)
        if not ok.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = np.where(ok, sl * sl / cl + sr * sr / cr - parent, -np.inf)
        t = int(np.argmax(gain))
        per_feature[f], thresholds[f] = gain[t], t
    best = float(per_feature.max())
    if not best > 1e-12:
        return 0.0, -1, 0, ()
    tied = np.flatnonzero(per_feature >= best - 1e-9 * max(1.0, abs(best)))
    return best, int(tied[0]), int(thresholds[tied[0]]), tuple(int(f) for f in tied)


class GradientBoostedTreeProbe(BaseEstimator, RegressorMixin):
    """Least-squares gradient boosting with shallow trees on quantile-binned features.

    Importances are the total squared-error reduction of the splits on each
    feature, summed over all trees of a target's ensemble. When several
    features give exactly the same best split the reduction is shared equally.
    """

    def __init__(self, n_estimators=100, max_depth=3, learning_rate=0.1, n_bins=64,
                 min_samples_leaf=5):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.n_bins = n_bins
        self.min_samples_leaf = min_samples_leaf

    def _bin(self, X):
        Xb = np.empty(X.shape, dtype=np.int64)
        for f, edges in enumerate(self.bin_edges_):
            Xb[:, f] = np.searchsorted(edges, X[:, f], side="right")
        return Xb

    def _fit_tree(self, Xb, residual, gains):
        tree = _Tree()
        root = tree.add_node(0.0)
        frontier = [(root, np.arange(Xb.shape[0]), 0)]
        while frontier:
            node, idx, depth = frontier.pop()
            tree.value[node] = self.learning_rate * residual[idx].mean()
            if depth >= self.max_depth or len(idx) < 2 * self.min_samples_leaf:
                continue
            gain, f, t, tied = _best_split(Xb, residual, idx, self.n_bins, self.min_samples_leaf)
            if f < 0:
                continue
            # features that split equally well share the credit
            gains[list(tied)] += gain / len(tied)
            go_left = Xb[idx, f] <= t
            tree.feature[node], tree.threshold[node] = f, t
            left, right = tree.add_node(0.0), tree.add_node(0.0)
            tree.left[node], tree.right[node] = left, right
            frontier.append((right, idx[~go_left], depth + 1))
            frontier.append((left, idx[go_left], depth + 1))
        return tree.freeze()

    def fit(self, X, Y):
        if self.max_depth < 1 or self.n_estimators < 1:
            raise ConfigurationError("max_depth and n_estimators must be >= 1")
        X = check_array(X, dtype=np.float64)
        Y, _ = _as_2d_targets(Y)
        if len(Y) != len(X):
            raise ConfigurationError("X and Y have different numbers of rows")
        self.n_features_in_ = X.shape[1]
        q = np.linspace(0, 1, self.n_bins + 1)[1:-1]
        self.bin_edges_ = [np.unique(np.quantile(X[:, f], q)) for f in range(X.shape[1])]
        Xb = self._bin(X)
        self.init_ = Y.mean(axis=0)
        self.estimators_ = []
        gains = np.zeros((X.shape[1], Y.shape[1]))
        for j in range(Y.shape[1]):
            pred = np.full(len(X), self.init_[j])
            trees = []
            for _ in range(self.n_estimators):
                residual = Y[:, j] - pred
                tree = self._fit_tree(Xb, residual, gains[:, j])
                pred += tree.predict_binned(Xb)
                trees.append(tree)
            self.estimators_.append(trees)
        self.gain_importances_ = gains
        self.degenerate_ = gains.sum(axis=0) <= 0
        self.feature_importances_ = _normalize_columns(gains)
        return self

    def predict(self, X):
        check_is_fitted(self, "estimators_")
        Xb = self._bin(check_array(X, dtype=np.float64))
        out = np.empty((len(Xb), len(self.estimators_)))
        for j, trees in enumerate(self.estimators_):
            pred = np.full(len(Xb), self.init_[j])
            for tree in trees:
                pred += tree.predict_binned(Xb)
            out[:, j] = pred
        return out


class L1LinearProbe(BaseEstimator, RegressorMixin):
    """Per-target Lasso on standardized features; importance = |coefficient|."""

    def __init__(self, alpha=0.01, max_iter=5000):
        self.alpha = alpha
        self.max_iter = max_iter

    def fit(self, X, Y):
        X = check_array(X, dtype=np.float64)
        Y, _ = _as_2d_targets(Y)
        self.n_features_in_ = X.shape[1]
        self.mean_ = X.mean(axis=0)
        self.scale_ = X.std(axis=0)
        self.scale_[self.scale_ == 0] = 1.0
        Xs = (X - self.mean_) / self.scale_
        self.models_ = []
        for j in range(Y.shape[1]):
            if np.ptp(Y[:, j]) == 0:
                # constant target: intercept-only model
                self.models_.append(DummyRegressor(strategy="constant", constant=Y[0, j]).fit(Xs, Y[:, j]))
            else:
                self.models_.append(Lasso(alpha=self.alpha, max_iter=self.max_iter).fit(Xs, Y[:, j]))
        raw = np.stack([np.abs(getattr(m, "coef_", np.zeros(X.shape[1]))) for m in self.models_], axis=1)
        self.gain_importances_ = raw
        self.degenerate_ = raw.sum(axis=0) <= 0
        self.feature_importances_ = _normalize_columns(raw)
        return self

    def predict(self, X):
        check_is_fitted(self, "models_")
        Xs = (check_array(X, dtype=np.float64) - self.mean_) / self.scale_
        return np.stack([m.predict(Xs) for m in self.models_], axis=1)


PROBES = {"tree-ensemble": GradientBoostedTreeProbe, "l1-linear": L1LinearProbe}


def fit_probe(Z_train, factors_train, kind="tree-ensemble", hyperparams=None, seed=0):
    """Fit a probe predicting every (normalized) factor column from ``Z_train``.

    Both probes are deterministic; ``seed`` is accepted for interface symmetry.
    """
    del seed
    Z_train, factors_train = check_X_y(Z_train, factors_train, multi_output=True, y_numeric=True)
    if len(Z_train) < 100:
        raise ConfigurationError("probes need at least 100 training rows")
    try:
        cls = PROBES[kind]
    except KeyError:
        raise ConfigurationError(f"unknown probe kind {kind!r}") from None
    return cls(**(hyperparams or {})).fit(Z_train, factors_train)
