"""Component regressors fit to each decomposition term.

``RegressionTree`` is a plain CART tree (squared error, midpoint thresholds).
``LookupRegressor`` memorizes its training points and answers with the
nearest one; with it the surrogate reproduces the training targets exactly,
which is what the oracle-equivalence checks rely on.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .core import InputError

_REL_TOL = 1e-12


def _check_fit_inputs(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise InputError(f"inputs {X.shape} and targets {y.shape} do not line up")
    if X.shape[0] == 0:
        raise InputError("cannot fit on an empty training set")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InputError("training data contains non-finite values")
    return X, y


class RegressionTree:
    """CART regression tree.

    Splits greedily on the feature/threshold pair with the smallest summed
    squared error of the two children. Candidate thresholds are midpoints
    between consecutive distinct values. Ties go to the lowest feature
    index, then the lowest threshold. Growth stops at ``max_depth``, when a
    child would get fewer than ``min_samples_leaf`` rows, or when no split
    lowers the error.
    """

    kind = "tree"

    def __init__(self, max_depth: int = 6, min_samples_leaf: int = 2):
        if max_depth < 0:
            raise InputError("max_depth must be >= 0")
        if min_samples_leaf < 1:
            raise InputError("min_samples_leaf must be >= 1")
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.n_features: Optional[int] = None
        self._set_nodes([], [], [], [], [])

    def _set_nodes(self, feature, threshold, left, right, value):
        self.feature_ = np.asarray(feature, dtype=np.int64)
        self.threshold_ = np.asarray(threshold, dtype=np.float64)
        self.left_ = np.asarray(left, dtype=np.int64)
        self.right_ = np.asarray(right, dtype=np.int64)
        self.value_ = np.asarray(value, dtype=np.float64)

    @property
    def node_count(self) -> int:
        return int(self.feature_.shape[0])

    def _best_split(self, X, y):
        n, p = X.shape
        m = self.min_samples_leaf
        best = None  # (sse, feature, threshold)
        for f in range(p):
            order = np.argsort(X[:, f], kind="stable")
            xs = X[order, f]
            ys = y[order]
            s1 = np.cumsum(ys)
            s2 = np.cumsum(ys * ys)
            # split after position i-1: left = [:i], right = [i:]
            i = np.arange(m, n - m + 1)
            i = i[xs[i - 1] < xs[i]] if i.size else i
            if i.size == 0:
                continue
            nl = i.astype(np.float64)
            nr = n - nl
            sl = s1[i - 1]
            sr = s1[-1] - sl
            sse = (s2[i - 1] - sl * sl / nl) + ((s2[-1] - s2[i - 1]) - sr * sr / nr)
            lo = sse.min()
            pick = int(np.flatnonzero(sse <= lo + _REL_TOL * max(1.0, abs(lo)))[0])
            if best is None or lo < best[0] - _REL_TOL * max(1.0, abs(best[0])):
                a, b = xs[i[pick] - 1], xs[i[pick]]
                thr = a + (b - a) / 2.0
                if not a <= thr < b:
                    thr = a
                best = (float(sse[pick]), f, float(thr))
        return best

    def fit(self, X, y) -> "RegressionTree":
        X, y = _check_fit_inputs(X, y)
        self.n_features = X.shape[1]
        feature, threshold, left, right, value = [], [], [], [], []

        def grow(idx, depth):
            node = len(feature)
            ys = y[idx]
            mean = float(ys.mean())
            feature.append(-1)
            threshold.append(np.nan)
            left.append(-1)
            right.append(-1)
            value.append(mean)
            if depth >= self.max_depth or idx.size < 2 * self.min_samples_leaf:
                return node
            sse_node = float(np.sum((ys - mean) ** 2))
            if sse_node <= _REL_TOL * max(1.0, float(np.sum(ys * ys))):
                return node
            split = self._best_split(X[idx], ys)
            if split is None or split[0] >= sse_node - _REL_TOL * max(1.0, sse_node):
                return node
            _, f, thr = split
            go_left = X[idx, f] <= thr
            feature[node] = f
            threshold[node] = thr
            left[node] = grow(idx[go_left], depth + 1)
            right[node] = grow(idx[~go_left], depth + 1)
            return node

        grow(np.arange(X.shape[0]), 0)
        self._set_nodes(feature, threshold, left, right, value)
        return self

    def predict(self, X) -> np.ndarray:
        if self.n_features is None:
            raise InputError("tree is not fitted")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.shape[1] != self.n_features:
            raise InputError(f"tree was fit on {self.n_features} features, got {X.shape[1]}")
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature_[node]
            inner = f >= 0
            if not inner.any():
                break
            r, n, fi = rows[inner], node[inner], f[inner]
            go_left = X[r, fi] <= self.threshold_[n]
            node[inner] = np.where(go_left, self.left_[n], self.right_[n])
        return self.value_[node].copy()

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.node_count):
            leaf = self.feature_[i] < 0
            nodes.append({
                "feature": int(self.feature_[i]),
                "threshold": None if leaf else float(self.threshold_[i]),
                "left": int(self.left_[i]),
                "right": int(self.right_[i]),
                "leaf_value": float(self.value_[i]),
            })
        return {
            "kind": self.kind,
            "n_features": self.n_features,
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "tree": {"nodes": nodes},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RegressionTree":
        tree = cls(int(data.get("max_depth", 6)), int(data.get("min_samples_leaf", 2)))
        nodes = data["tree"]["nodes"]
        if not nodes:
            raise InputError("tree has no nodes")
        tree.n_features = int(data["n_features"])
        n = len(nodes)
        feature = [int(nd["feature"]) for nd in nodes]
        left = [int(nd["left"]) for nd in nodes]
        right = [int(nd["right"]) for nd in nodes]
        for i, f in enumerate(feature):
            if f >= tree.n_features or (f >= 0 and not (0 < left[i] < n and 0 < right[i] < n)):
                raise InputError(f"tree node {i} is malformed")
        tree._set_nodes(
            feature,
            [np.nan if nd["threshold"] is None else float(nd["threshold"]) for nd in nodes],
            left,
            right,
            [float(nd["leaf_value"]) for nd in nodes],
        )
        return tree


def _row_keys(X: np.ndarray) -> list[bytes]:
    # + 0.0 folds -0.0 into 0.0 so both hit the same key
    return [row.tobytes() for row in np.ascontiguousarray(X + 0.0)]


class LookupRegressor:
    """Nearest-neighbour memorizer with an exact-match fast path.

    Duplicate training inputs are merged and their targets averaged.
    """

    kind = "lookup"

    def __init__(self):
        self.points_: Optional[np.ndarray] = None
        self.targets_: Optional[np.ndarray] = None

    def fit(self, X, y) -> "LookupRegressor":
        X, y = _check_fit_inputs(X, y)
        points, inverse = np.unique(X + 0.0, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        sums = np.bincount(inverse, weights=y, minlength=points.shape[0])
        counts = np.bincount(inverse, minlength=points.shape[0])
        lo = np.full(points.shape[0], np.inf)
        hi = np.full(points.shape[0], -np.inf)
        np.minimum.at(lo, inverse, y)
        np.maximum.at(hi, inverse, y)
        # keep repeated identical targets bit-exact instead of re-averaging them
        targets = np.where(lo == hi, lo, sums / counts)
        self._install(points, targets)
        return self

    def _install(self, points, targets):
        self.points_ = np.ascontiguousarray(points, dtype=np.float64)
        self.targets_ = np.asarray(targets, dtype=np.float64)
        self._index = {k: i for i, k in enumerate(_row_keys(self.points_))}
        self._kdtree = None

    @property
    def n_features(self) -> Optional[int]:
        return None if self.points_ is None else self.points_.shape[1]

    def predict(self, X) -> np.ndarray:
        if self.points_ is None:
            raise InputError("lookup regressor is not fitted")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.shape[1] != self.points_.shape[1]:
            raise InputError(f"lookup was fit on {self.points_.shape[1]} features, got {X.shape[1]}")
        hit = np.array([self._index.get(k, -1) for k in _row_keys(X)], dtype=np.int64)
        miss = hit < 0
        if miss.any():
            if self._kdtree is None:
                self._kdtree = cKDTree(self.points_)
            _, nearest = self._kdtree.query(X[miss], k=1)
            hit[miss] = nearest
        return self.targets_[hit].copy()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "lookup": {
                "points": self.points_.tolist(),
                "targets": self.targets_.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LookupRegressor":
        body = data["lookup"]
        points = np.asarray(body["points"], dtype=np.float64)
        targets = np.asarray(body["targets"], dtype=np.float64)
        if points.ndim != 2 or targets.shape != (points.shape[0],) or points.shape[0] == 0:
            raise InputError("lookup table is malformed")
        reg = cls()
        reg._install(points, targets)
        return reg


REGRESSORS = {"tree": RegressionTree, "lookup": LookupRegressor}


def make_regressor(kind: str = "tree", **params):
    try:
        cls = REGRESSORS[kind]
    except KeyError:
        raise InputError(f"unknown regressor {kind!r}; choose from {sorted(REGRESSORS)}") from None
    return cls(**params)


def regressor_from_dict(data: dict):
    kind = data.get("kind")
    if kind not in REGRESSORS:
        raise InputError(f"unknown regressor kind {kind!r}")
    return REGRESSORS[kind].from_dict(data)
