"""Positive-Unlabeled learning over the tree-ensemble base learners.

Labeled-untrustworthy domains are the positives; an equal-sized seeded
sample of the unknowns is the unlabeled class. The classic constant-c
calibration applies: hold out a fraction of the positives, estimate the
labeling frequency c as the mean base score on that holdout, and rescale
scores by 1/c at prediction time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.metrics import roc_auc_score
from sklearn.model_selection import StratifiedKFold

from .features import FeatureMatrix
from .labeling import LabelReport
from .models import BASE_KINDS, base_classifier_from_dict, make_base_classifier
from .models.validation import check_fitted, check_Xy

logger = logging.getLogger(__name__)

MIN_TRAINING_ROWS = 20


class InsufficientUnknownsError(RuntimeError):
    """Fewer unknown domains than needed for the unlabeled sample."""


class DegenerateTrainingError(RuntimeError):
    """All targets identical; nothing to learn."""


class SchemaMismatchError(RuntimeError):
    """Scoring input columns differ from the columns the model was fit on."""


class UnsupportedBaseError(TypeError):
    """Split-count importance needs a tree-based base classifier."""


@dataclass
class TrainingSet:
    positives: list[str]
    unlabeled: list[str]
    X: np.ndarray
    y: np.ndarray
    column_names: list[str]
    iteration_id: int
    schema_fingerprint: str

    @property
    def size(self) -> int:
        return len(self.positives) + len(self.unlabeled)

    @property
    def all_plds(self) -> set[str]:
        return set(self.positives) | set(self.unlabeled)


def build_training_set(
    report: LabelReport,
    matrix: FeatureMatrix,
    seed: int,
    sample_ratio: float = 1.0,
) -> TrainingSet:
    """Positives plus a seeded uniform sample of the unknowns.

    By default the sample matches the positive count, so the training set
    is twice the labeled subtotal. Only domains with rows in this
    iteration's matrix can enter.
    """
    if report.iteration_id != matrix.iteration_id:
        raise ValueError("label report and feature matrix are from different iterations")
    row_of = {pld: i for i, pld in enumerate(matrix.plds)}
    positives = sorted(pld for pld in report.labeled if pld in row_of)
    pool = sorted(pld for pld in report.unknown if pld in row_of)
    want = int(round(len(positives) * sample_ratio))
    if positives and len(pool) < want:
        raise InsufficientUnknownsError(
            f"need {want} unknowns to sample, only {len(pool)} available")
    if not positives:
        logger.warning("no labeled domains this iteration; training will be skipped")
        sampled: list[str] = []
    else:
        rng = np.random.default_rng(seed)
        sampled = sorted(rng.choice(pool, size=want, replace=False).tolist())
    chosen = positives + sampled
    X = matrix.X[[row_of[pld] for pld in chosen], :] if chosen else np.empty((0, matrix.X.shape[1]))
    y = np.concatenate([np.ones(len(positives)), np.zeros(len(sampled))])
    return TrainingSet(
        positives=positives,
        unlabeled=sampled,
        X=X,
        y=y,
        column_names=matrix.column_names,
        iteration_id=matrix.iteration_id,
        schema_fingerprint=matrix.schema_fingerprint(),
    )


class PositiveUnlabeledScorer(BaseEstimator):
    """Wrap a base classifier with constant-c labeling-frequency calibration."""

    def __init__(self, base: BaseEstimator | None = None,
                 hold_out_ratio: float = 0.2, random_state: int = 0) -> None:
        self.base = base
        self.hold_out_ratio = hold_out_ratio
        self.random_state = random_state

    def fit(self, X, y) -> "PositiveUnlabeledScorer":
        X, y = check_Xy(X, y)
        if len(np.unique(y)) < 2:
            raise DegenerateTrainingError("all training targets are identical")
        positives = np.flatnonzero(y == 1.0)
        n_hold = max(1, int(np.ceil(positives.size * self.hold_out_ratio)))
        if positives.size - n_hold < 1:
            raise DegenerateTrainingError(
                f"{positives.size} positives cannot spare a c-estimation holdout")
        rng = np.random.default_rng(self.random_state)
        held = rng.permutation(positives)[:n_hold]
        keep = np.setdiff1d(np.arange(X.shape[0]), held)

        self.base_ = clone(self.base) if self.base is not None else make_base_classifier("boosted")
        self.base_.fit(X[keep], y[keep])
        holdout_scores = self.base_.predict_proba(X[held])[:, 1]
        self.c_hat_ = float(np.clip(holdout_scores.mean(), 1e-6, 1.0))
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_fitted(self, "c_hat_")
        p = np.minimum(1.0, self.base_.predict_proba(X)[:, 1] / self.c_hat_)
        return np.column_stack([1.0 - p, p])


@dataclass
class TuningBudget:
    trials: int = 25
    seed: int = 0
    folds: int = 3
    space: dict[str, list] | None = None  # overrides the per-kind default space

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trial count must be >= 1")


_SEARCH_SPACES: dict[str, dict[str, list]] = {
    "tree": {
        "max_depth": [3, 4, 5, 6, 8, 10, 12],
        "min_samples_leaf": [1, 2, 5, 10, 20, 50],
    },
    "forest": {
        "n_estimators": [20, 40, 60, 100, 150],
        "max_depth": [4, 6, 8, 10, 12],
        "min_samples_leaf": [1, 2, 5, 10],
        "max_features": ["sqrt", "all"],
    },
    "boosted": {
        "n_estimators": [30, 60, 100, 150, 200],
        "learning_rate": [0.03, 0.05, 0.1, 0.2, 0.3],
        "num_leaves": [7, 15, 31, 63],
        "min_samples_leaf": [5, 10, 20, 50],
    },
}


def _cv_auc(kind: str, params: dict, X: np.ndarray, y: np.ndarray,
            folds: int, seed: int) -> float:
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    aucs = []
    for train_idx, test_idx in splitter.split(X, y):
        model = make_base_classifier(kind, params)
        model.fit(X[train_idx], y[train_idx])
        scores = model.predict_proba(X[test_idx])[:, 1]
        if len(np.unique(y[test_idx])) < 2:
            continue
        aucs.append(roc_auc_score(y[test_idx], scores))
    return float(np.mean(aucs)) if aucs else 0.5


def random_search(X: np.ndarray, y: np.ndarray, kind: str,
                  budget: TuningBudget) -> tuple[dict, float]:
    """Seeded random search maximizing cross-validated AUC."""
    space = budget.space if budget.space is not None else _SEARCH_SPACES[kind]
    rng = np.random.default_rng(budget.seed)
    folds = min(budget.folds, int(np.bincount(y.astype(int)).min()))
    best_params: dict = {"random_state": budget.seed}
    best_auc = -1.0
    for _trial in range(budget.trials):
        params = {key: values[rng.integers(len(values))] for key, values in space.items()}
        params["random_state"] = budget.seed
        auc = _cv_auc(kind, params, X, y, folds, budget.seed) if folds >= 2 else 0.5
        if auc > best_auc:
            best_auc, best_params = auc, params
    return best_params, best_auc


@dataclass
class PuModel:
    """Trained, calibrated scorer plus everything needed to audit it."""

    pu: PositiveUnlabeledScorer
    base_kind: str
    hyperparameters: dict
    schema_fingerprint: str
    column_names: list[str]
    trained_on: int
    search_auc: float = 0.0

    @property
    def c_hat(self) -> float:
        return self.pu.c_hat_

    def to_dict(self) -> dict:
        return {
            "base_kind": self.base_kind,
            "hyperparameters": self.hyperparameters,
            "schema_fingerprint": self.schema_fingerprint,
            "column_names": list(self.column_names),
            "trained_on": self.trained_on,
            "search_auc": self.search_auc,
            "c_hat": self.c_hat,
            "base": self.pu.base_.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PuModel":
        pu = PositiveUnlabeledScorer()
        pu.base_ = base_classifier_from_dict(doc["base"])
        pu.c_hat_ = doc["c_hat"]
        return cls(
            pu=pu,
            base_kind=doc["base_kind"],
            hyperparameters=doc["hyperparameters"],
            schema_fingerprint=doc["schema_fingerprint"],
            column_names=list(doc["column_names"]),
            trained_on=doc["trained_on"],
            search_auc=doc["search_auc"],
        )


def train_pu(ts: TrainingSet, base_kind: str = "boosted",
             budget: TuningBudget | None = None,
             min_rows: int = MIN_TRAINING_ROWS) -> PuModel:
    """Tune, fit, and calibrate one PU model on this iteration's training set."""
    if base_kind not in BASE_KINDS:
        raise ValueError(f"unknown base kind {base_kind!r}")
    if ts.size < min_rows:
        raise DegenerateTrainingError(
            f"training set of {ts.size} rows is below the minimum of {min_rows}")
    budget = budget if budget is not None else TuningBudget()
    params, search_auc = random_search(ts.X, ts.y, base_kind, budget)
    pu = PositiveUnlabeledScorer(
        base=make_base_classifier(base_kind, params),
        random_state=budget.seed,
    )
    pu.fit(ts.X, ts.y)
    return PuModel(
        pu=pu,
        base_kind=base_kind,
        hyperparameters=params,
        schema_fingerprint=ts.schema_fingerprint,
        column_names=list(ts.column_names),
        trained_on=ts.iteration_id,
        search_auc=search_auc,
    )


def score(model: PuModel, matrix: FeatureMatrix) -> dict[str, float]:
    """Calibrated untrustworthiness probability for every matrix row."""
    if matrix.schema_fingerprint() != model.schema_fingerprint:
        raise SchemaMismatchError(
            "feature matrix columns do not match the model's training schema")
    probs = model.pu.predict_proba(matrix.X)[:, 1]
    return {pld: float(p) for pld, p in zip(matrix.plds, probs)}


@dataclass
class CvRow:
    kind: str
    auc: float
    recall: float
    precision: float
    f1: float


def evaluate_cv(ts: TrainingSet, base_kinds: list[str] | tuple[str, ...] = BASE_KINDS,
                folds: int = 5, seed: int = 0,
                budget: TuningBudget | None = None) -> list[CvRow]:
    """Stratified k-fold comparison of the base learners.

    Recall/precision/F1 use the 0.5 threshold on the positive-vs-unlabeled
    task; metrics are averaged over folds.
    """
    if folds < 2:
        raise ValueError("folds must be >= 2")
    X, y = ts.X, ts.y
    rows = []
    for kind in base_kinds:
        if budget is not None:
            params, _ = random_search(X, y, kind, budget)
        else:
            params = {"random_state": seed}
        splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
        aucs, recalls, precisions, f1s = [], [], [], []
        for train_idx, test_idx in splitter.split(X, y):
            model = make_base_classifier(kind, params)
            model.fit(X[train_idx], y[train_idx])
            scores = model.predict_proba(X[test_idx])[:, 1]
            truth = y[test_idx]
            pred = (scores >= 0.5).astype(float)
            tp = float(np.sum((pred == 1) & (truth == 1)))
            fp = float(np.sum((pred == 1) & (truth == 0)))
            fn = float(np.sum((pred == 0) & (truth == 1)))
            recall = tp / (tp + fn) if tp + fn else 0.0
            precision = tp / (tp + fp) if tp + fp else 0.0
            f1 = (2 * precision * recall / (precision + recall)
                  if precision + recall else 0.0)
            if len(np.unique(truth)) == 2:
                aucs.append(roc_auc_score(truth, scores))
            recalls.append(recall)
            precisions.append(precision)
            f1s.append(f1)
        rows.append(CvRow(
            kind=kind,
            auc=float(np.mean(aucs)) if aucs else 0.5,
            recall=float(np.mean(recalls)),
            precision=float(np.mean(precisions)),
            f1=float(np.mean(f1s)),
        ))
    return rows


def render_cv_table(rows: list[CvRow]) -> str:
    """Plain comparison table: algorithm, AUC, recall, precision, F1."""
    out = [f"{'Algorithm':<10}  {'AUC':>6}  {'Recall':>6}  {'Precision':>9}  {'F1':>6}"]
    out.append("-" * len(out[0]))
    for row in rows:
        out.append(f"{row.kind:<10}  {row.auc * 100:5.1f}%  {row.recall * 100:5.1f}%  "
                   f"{row.precision * 100:8.1f}%  {row.f1 * 100:5.1f}%")
    return "\n".join(out)


def report_importance(model: PuModel, columns: list[tuple[str, str]]) -> dict[str, int]:
    """Split counts summed per feature group; all 13 groups always present."""
    from .features import GROUP_ORDER  # local import avoids a cycle

    base = model.pu.base_
    counts = getattr(base, "feature_split_counts_", None)
    if counts is None:
        raise UnsupportedBaseError(
            f"base classifier {type(base).__name__} has no split counts")
    if len(columns) != len(counts):
        raise SchemaMismatchError("column list does not match the model's features")
    out = {group: 0 for group in GROUP_ORDER}
    for (group, _label), count in zip(columns, counts):
        out[group] = out.get(group, 0) + int(count)
    return out


def importance_by_column(model: PuModel) -> dict[str, float]:
    """Per-column split counts keyed by column name, for feature selection."""
    counts = getattr(model.pu.base_, "feature_split_counts_", None)
    if counts is None:
        raise UnsupportedBaseError("base classifier has no split counts")
    return {name: float(c) for name, c in zip(model.column_names, counts)}
