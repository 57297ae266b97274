"""Bagged forest of gini trees with per-node feature subsampling."""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator

from .binning import FeatureBinner
from .tree import grow_gini_tree, tree_predict
from .validation import check_fitted, check_X, check_Xy


class RandomForestScorer(BaseEstimator):
    def __init__(self, n_estimators: int = 50, max_depth: int = 10,
                 min_samples_leaf: int = 2, max_features: str | int = "sqrt",
                 max_bins: int = 255, random_state: int = 0) -> None:
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.max_bins = max_bins
        self.random_state = random_state

    def _resolve_max_features(self, n_features: int) -> int:
        if self.max_features == "sqrt":
            return max(1, int(math.sqrt(n_features)))
        if self.max_features == "all" or self.max_features is None:
            return n_features
        return max(1, min(int(self.max_features), n_features))

    def fit(self, X, y) -> "RandomForestScorer":
        X, y = check_Xy(X, y)
        n = X.shape[0]
        binner = FeatureBinner(self.max_bins).fit(X)
        binned = binner.transform(X)
        rng = np.random.default_rng(self.random_state)
        max_features = self._resolve_max_features(X.shape[1])
        self.n_features_in_ = X.shape[1]
        self.feature_split_counts_ = np.zeros(X.shape[1], dtype=np.int64)
        self.trees_: list[dict] = []
        for _ in range(self.n_estimators):
            sample = rng.integers(0, n, size=n)
            self.trees_.append(
                grow_gini_tree(
                    binned[sample], y[sample], binner.thresholds_,
                    max_depth=self.max_depth,
                    min_samples_leaf=self.min_samples_leaf,
                    max_features=max_features,
                    rng=rng,
                    split_counts=self.feature_split_counts_,
                )
            )
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_fitted(self, "trees_")
        X = check_X(X, self.n_features_in_)
        p = np.mean([tree_predict(tree, X) for tree in self.trees_], axis=0)
        return np.column_stack([1.0 - p, p])

    @property
    def feature_importances_(self) -> np.ndarray:
        check_fitted(self, "feature_split_counts_")
        total = self.feature_split_counts_.sum()
        if total == 0:
            return np.zeros_like(self.feature_split_counts_, dtype=np.float64)
        return self.feature_split_counts_ / total

    def to_dict(self) -> dict:
        check_fitted(self, "trees_")
        return {
            "kind": "forest",
            "params": self.get_params(),
            "n_features": self.n_features_in_,
            "split_counts": self.feature_split_counts_.tolist(),
            "trees": self.trees_,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RandomForestScorer":
        model = cls(**doc["params"])
        model.n_features_in_ = doc["n_features"]
        model.feature_split_counts_ = np.asarray(doc["split_counts"], dtype=np.int64)
        model.trees_ = doc["trees"]
        return model
