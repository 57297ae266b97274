"""Tree-ensemble base learners behind one sklearn-style contract.

All three implementations are built in-repo so the scoring path stays
auditable and deterministic: a single decision tree, a bagged forest, and
a histogram gradient-boosted ensemble. Each exposes fit / predict_proba /
feature_split_counts_ and serializes to a plain document.
"""

from __future__ import annotations

from .boosting import GradientBoostedScorer
from .forest import RandomForestScorer
from .tree import DecisionTreeScorer

BASE_KINDS = ("tree", "forest", "boosted")

_CLASSES = {
    "tree": DecisionTreeScorer,
    "forest": RandomForestScorer,
    "boosted": GradientBoostedScorer,
}


def make_base_classifier(kind: str, params: dict | None = None):
    if kind not in _CLASSES:
        raise ValueError(f"unknown base classifier kind {kind!r}; expected {BASE_KINDS}")
    return _CLASSES[kind](**(params or {}))


def base_classifier_from_dict(doc: dict):
    kind = doc.get("kind")
    if kind not in _CLASSES:
        raise ValueError(f"cannot deserialize base classifier kind {kind!r}")
    return _CLASSES[kind].from_dict(doc)


__all__ = [
    "BASE_KINDS",
    "DecisionTreeScorer",
    "GradientBoostedScorer",
    "RandomForestScorer",
    "base_classifier_from_dict",
    "make_base_classifier",
]
