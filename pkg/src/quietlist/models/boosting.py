"""Histogram gradient-boosted trees with logistic loss.

Trees grow leaf-wise (best gain first) up to a leaf budget, the growth
strategy that pairs naturally with histogram split finding. Everything is
plain numpy and single-threaded, so fits are reproducible run to run.
"""

from __future__ import annotations

import heapq

import numpy as np
from sklearn.base import BaseEstimator

from .binning import FeatureBinner
from .tree import tree_predict
from .validation import check_fitted, check_X, check_Xy

_EPS = 1e-12


def _sigmoid(raw: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(raw, -60.0, 60.0)))


class _Node:
    __slots__ = ("idx", "depth", "grad", "hess", "best")

    def __init__(self, idx: np.ndarray, depth: int, grad: float, hess: float) -> None:
        self.idx = idx
        self.depth = depth
        self.grad = grad
        self.hess = hess
        self.best: tuple[float, int, int] | None = None  # (gain, feature, bin)


class GradientBoostedScorer(BaseEstimator):
    def __init__(self, n_estimators: int = 100, learning_rate: float = 0.1,
                 num_leaves: int = 31, max_depth: int = -1,
                 min_samples_leaf: int = 20, l2_regularization: float = 1.0,
                 max_bins: int = 255, random_state: int = 0) -> None:
        self.n_estimators = n_estimators
        self.learning_rate = learning_rate
        self.num_leaves = num_leaves
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.l2_regularization = l2_regularization
        self.max_bins = max_bins
        self.random_state = random_state

    # -- split search -------------------------------------------------------

    def _find_best_split(self, node: _Node, binned: np.ndarray,
                         thresholds: list[np.ndarray],
                         g: np.ndarray, h: np.ndarray) -> None:
        lam = self.l2_regularization
        idx = node.idx
        parent_obj = node.grad * node.grad / (node.hess + lam)
        best_gain, best_f, best_k = 0.0, -1, -1
        for f in range(binned.shape[1]):
            nbins = len(thresholds[f]) + 1
            if nbins < 2:
                continue
            col = binned[idx, f]
            count = np.bincount(col, minlength=nbins)
            if np.count_nonzero(count) < 2:
                continue
            g_hist = np.bincount(col, weights=g[idx], minlength=nbins)
            h_hist = np.bincount(col, weights=h[idx], minlength=nbins)
            gl = np.cumsum(g_hist)[:-1]
            hl = np.cumsum(h_hist)[:-1]
            nl = np.cumsum(count)[:-1]
            gr = node.grad - gl
            hr = node.hess - hl
            nr = idx.size - nl
            valid = (nl >= self.min_samples_leaf) & (nr >= self.min_samples_leaf)
            if not np.any(valid):
                continue
            gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent_obj)
            gain = np.where(valid, gain, -np.inf)
            k = int(np.argmax(gain))
            if gain[k] > best_gain + _EPS:
                best_gain, best_f, best_k = float(gain[k]), f, k
        if best_f >= 0:
            node.best = (best_gain, best_f, best_k)

    def _grow_tree(self, binned: np.ndarray, thresholds: list[np.ndarray],
                   g: np.ndarray, h: np.ndarray) -> dict | None:
        lam = self.l2_regularization

        def leaf_value(node: _Node) -> float:
            return float(-self.learning_rate * node.grad / (node.hess + lam))

        root = _Node(np.arange(binned.shape[0]), 0, float(g.sum()), float(h.sum()))
        self._find_best_split(root, binned, thresholds, g, h)
        if root.best is None:
            return None

        # tree is assembled as nested dicts; placeholder nodes are patched
        # in place when their split is applied
        tree: dict = {}
        heap: list[tuple[float, int, _Node, dict]] = []
        counter = 0  # insertion order breaks gain ties deterministically
        heapq.heappush(heap, (-root.best[0], counter, root, tree))
        n_leaves = 1

        while heap and n_leaves < self.num_leaves:
            _neg_gain, _tie, node, slot = heapq.heappop(heap)
            gain, f, k = node.best
            if gain <= 0.0:
                slot.update({"value": leaf_value(node), "n": int(node.idx.size)})
                continue
            left_mask = binned[node.idx, f] <= k
            left = _Node(node.idx[left_mask], node.depth + 1,
                         float(g[node.idx[left_mask]].sum()),
                         float(h[node.idx[left_mask]].sum()))
            right = _Node(node.idx[~left_mask], node.depth + 1,
                          node.grad - left.grad, node.hess - left.hess)
            slot.clear()
            slot.update({
                "feature": int(f),
                "threshold": float(thresholds[f][k]),
                "left": {},
                "right": {},
            })
            self._split_counts[f] += 1
            n_leaves += 1
            for child, child_slot in ((left, slot["left"]), (right, slot["right"])):
                depth_ok = self.max_depth <= 0 or child.depth < self.max_depth
                if depth_ok and child.idx.size >= 2 * self.min_samples_leaf:
                    self._find_best_split(child, binned, thresholds, g, h)
                if depth_ok and child.best is not None:
                    counter += 1
                    heapq.heappush(heap, (-child.best[0], counter, child, child_slot))
                else:
                    child_slot.update({"value": leaf_value(child), "n": int(child.idx.size)})

        # anything still queued becomes a leaf
        for _neg_gain, _tie, node, slot in heap:
            slot.clear()
            slot.update({"value": leaf_value(node), "n": int(node.idx.size)})
        return tree

    # -- estimator API --------------------------------------------------------

    def fit(self, X, y) -> "GradientBoostedScorer":
        X, y = check_Xy(X, y)
        binner = FeatureBinner(self.max_bins).fit(X)
        binned = binner.transform(X)
        self.n_features_in_ = X.shape[1]
        self._split_counts = np.zeros(X.shape[1], dtype=np.int64)

        base_rate = float(np.clip(y.mean(), 1e-6, 1.0 - 1e-6))
        self.base_raw_ = float(np.log(base_rate / (1.0 - base_rate)))
        raw = np.full(X.shape[0], self.base_raw_)
        self.trees_: list[dict] = []
        for _ in range(self.n_estimators):
            p = _sigmoid(raw)
            g = p - y
            h = np.maximum(p * (1.0 - p), 1e-9)
            tree = self._grow_tree(binned, binner.thresholds_, g, h)
            if tree is None:
                break
            self.trees_.append(tree)
            raw += tree_predict(tree, X)
        self.feature_split_counts_ = self._split_counts
        return self

    def decision_function(self, X) -> np.ndarray:
        check_fitted(self, "trees_")
        X = check_X(X, self.n_features_in_)
        raw = np.full(X.shape[0], self.base_raw_)
        for tree in self.trees_:
            raw += tree_predict(tree, X)
        return raw

    def predict_proba(self, X) -> np.ndarray:
        p = _sigmoid(self.decision_function(X))
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
            "kind": "boosted",
            "params": self.get_params(),
            "n_features": self.n_features_in_,
            "split_counts": self.feature_split_counts_.tolist(),
            "base_raw": self.base_raw_,
            "trees": self.trees_,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GradientBoostedScorer":
        model = cls(**doc["params"])
        model.n_features_in_ = doc["n_features"]
        model.feature_split_counts_ = np.asarray(doc["split_counts"], dtype=np.int64)
        model.base_raw_ = doc["base_raw"]
        model.trees_ = doc["trees"]
        return model
