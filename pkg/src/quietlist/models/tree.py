"""Single decision tree scorer with histogram split search.

The grower is shared with the bagged forest: it optionally samples a
feature subset per node from an injected generator, which is also the only
source of randomness, so fits are bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .binning import FeatureBinner
from .validation import check_fitted, check_X, check_Xy


def _gini_sum(pos: np.ndarray, n: np.ndarray) -> np.ndarray:
    """n * gini for child nodes, safe where n == 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(n > 0, pos / np.maximum(n, 1), 0.0)
    return n * 2.0 * p * (1.0 - p)


def grow_gini_tree(
    binned: np.ndarray,
    y: np.ndarray,
    thresholds: list[np.ndarray],
    *,
    max_depth: int,
    min_samples_leaf: int,
    max_features: int | None = None,
    rng: np.random.Generator | None = None,
    split_counts: np.ndarray | None = None,
) -> dict:
    """Greedy impurity-minimizing tree over pre-binned features."""
    n_features = binned.shape[1]

    def build(idx: np.ndarray, depth: int) -> dict:
        n = idx.size
        pos = float(y[idx].sum())
        leaf = {"value": pos / n, "n": n}
        if depth >= max_depth or n < 2 * min_samples_leaf or pos in (0.0, n):
            return leaf

        if max_features is not None and max_features < n_features:
            candidates = np.sort(rng.choice(n_features, size=max_features, replace=False))
        else:
            candidates = np.arange(n_features)

        parent_score = _gini_sum(np.array([pos]), np.array([float(n)]))[0]
        best_gain = 0.0
        best: tuple[int, int] | None = None
        for f in candidates:
            nbins = len(thresholds[f]) + 1
            if nbins < 2:
                continue
            col = binned[idx, f]
            count = np.bincount(col, minlength=nbins).astype(np.float64)
            pos_hist = np.bincount(col, weights=y[idx], minlength=nbins)
            left_n = np.cumsum(count)[:-1]
            left_pos = np.cumsum(pos_hist)[:-1]
            right_n = n - left_n
            right_pos = pos - left_pos
            valid = (left_n >= min_samples_leaf) & (right_n >= min_samples_leaf)
            if not np.any(valid):
                continue
            child_score = _gini_sum(left_pos, left_n) + _gini_sum(right_pos, right_n)
            gain = np.where(valid, parent_score - child_score, -np.inf)
            k = int(np.argmax(gain))
            if gain[k] > best_gain + 1e-12:
                best_gain = float(gain[k])
                best = (int(f), k)

        if best is None:
            return leaf
        f, k = best
        if split_counts is not None:
            split_counts[f] += 1
        left_mask = binned[idx, f] <= k
        return {
            "feature": f,
            "threshold": float(thresholds[f][k]),
            "left": build(idx[left_mask], depth + 1),
            "right": build(idx[~left_mask], depth + 1),
        }

    return build(np.arange(binned.shape[0]), 0)


def tree_predict(node: dict, X: np.ndarray) -> np.ndarray:
    """Vectorized traversal: routes index blocks instead of single rows."""
    out = np.empty(X.shape[0], dtype=np.float64)

    def walk(nd: dict, idx: np.ndarray) -> None:
        if "value" in nd:
            out[idx] = nd["value"]
            return
        left = X[idx, nd["feature"]] < nd["threshold"]
        walk(nd["left"], idx[left])
        walk(nd["right"], idx[~left])

    walk(node, np.arange(X.shape[0]))
    return out


class DecisionTreeScorer(BaseEstimator):
    """Gini-greedy binary tree; leaves score the positive-class fraction."""

    def __init__(self, max_depth: int = 8, min_samples_leaf: int = 5,
                 max_bins: int = 255, random_state: int = 0) -> None:
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.max_bins = max_bins
        self.random_state = random_state

    def fit(self, X, y) -> "DecisionTreeScorer":
        X, y = check_Xy(X, y)
        binner = FeatureBinner(self.max_bins).fit(X)
        binned = binner.transform(X)
        self.n_features_in_ = X.shape[1]
        self.feature_split_counts_ = np.zeros(self.n_features_in_, dtype=np.int64)
        self.tree_ = grow_gini_tree(
            binned, y, binner.thresholds_,
            max_depth=self.max_depth,
            min_samples_leaf=self.min_samples_leaf,
            split_counts=self.feature_split_counts_,
        )
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_fitted(self, "tree_")
        X = check_X(X, self.n_features_in_)
        p = tree_predict(self.tree_, X)
        return np.column_stack([1.0 - p, p])

    @property
    def feature_importances_(self) -> np.ndarray:
        check_fitted(self, "feature_split_counts_")
        total = self.feature_split_counts_.sum()
        if total == 0:
            return np.zeros_like(self.feature_split_counts_, dtype=np.float64)
        return self.feature_split_counts_ / total

    def to_dict(self) -> dict:
        check_fitted(self, "tree_")
        return {
            "kind": "tree",
            "params": self.get_params(),
            "n_features": self.n_features_in_,
            "split_counts": self.feature_split_counts_.tolist(),
            "tree": self.tree_,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DecisionTreeScorer":
        model = cls(**doc["params"])
        model.n_features_in_ = doc["n_features"]
        model.feature_split_counts_ = np.asarray(doc["split_counts"], dtype=np.int64)
        model.tree_ = doc["tree"]
        return model
