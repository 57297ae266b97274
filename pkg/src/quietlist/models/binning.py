"""Histogram binning shared by the tree growers.

Each feature maps to at most ``max_bins`` integer bins. Splits are searched
on bin boundaries and stored back as real thresholds, so fitted models
predict on raw feature values without the binner.
"""

from __future__ import annotations

import numpy as np


class FeatureBinner:
    def __init__(self, max_bins: int = 255) -> None:
        if max_bins < 2:
            raise ValueError("max_bins must be >= 2")
        self.max_bins = max_bins

    def fit(self, X: np.ndarray) -> "FeatureBinner":
        self.thresholds_: list[np.ndarray] = []
        for col in X.T:
            unique = np.unique(col)
            if unique.size <= 1:
                self.thresholds_.append(np.empty(0))
            elif unique.size <= self.max_bins:
                self.thresholds_.append((unique[:-1] + unique[1:]) / 2.0)
            else:
                qs = np.quantile(col, np.linspace(0.0, 1.0, self.max_bins + 1)[1:-1])
                self.thresholds_.append(np.unique(qs))
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        binned = np.empty(X.shape, dtype=np.int32)
        for j, thresholds in enumerate(self.thresholds_):
            # bin index = number of thresholds at or below the value,
            # so "bin <= k" is equivalent to "value < thresholds[k]"
            binned[:, j] = np.searchsorted(thresholds, X[:, j], side="right")
        return binned

    def n_bins(self, feature: int) -> int:
        return len(self.thresholds_[feature]) + 1
