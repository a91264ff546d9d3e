"""
Encounter-level performance measures.
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from utils.constants import THRESHOLD_PERCENTILE
from utils.errors import DataError, UndefinedMetricError
from utils.statistics import linear_percentile


@dataclass
class ScoreSet:
    """Per encounter: id, admission month-year, max score and label."""
    encounter_ids: np.ndarray
    month_years: np.ndarray
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.encounter_ids = np.asarray(self.encounter_ids, dtype=object)
        self.month_years = np.asarray(self.month_years, dtype=object)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.scores)
        if not len(self.encounter_ids) == len(self.month_years) == len(self.labels) == n:
            raise DataError("score set columns differ in length")
        if n and (self.scores.min() < 0.0 or self.scores.max() > 1.0):
            raise DataError("scores must lie in [0, 1]")
        if n and not np.isin(self.labels, (0, 1)).all():
            raise DataError("labels must be 0 or 1")

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    def take(self, indices) -> 'ScoreSet':
        indices = np.asarray(indices, dtype=np.int64)
        return ScoreSet(self.encounter_ids[indices], self.month_years[indices], self.scores[indices],
                        self.labels[indices])

    def months(self):
        return sorted(set(self.month_years))

    def for_month(self, month_year: str) -> 'ScoreSet':
        return self.take(np.flatnonzero(self.month_years == month_year))

    @staticmethod
    def from_daily(rows: pd.DataFrame, daily_scores: Sequence[float]) -> 'ScoreSet':
        """Collapse day rows (encounter_id, admit_month_year, label) to encounter max scores."""
        frame = pd.DataFrame({
            "encounter_id": rows["encounter_id"].to_numpy(),
            "admit_month_year": rows["admit_month_year"].to_numpy(),
            "label": rows["label"].to_numpy(),
            "score": np.asarray(daily_scores, dtype=np.float64),
        })
        grouped = frame.groupby("encounter_id", sort=False).agg(
            admit_month_year=("admit_month_year", "first"), label=("label", "max"), score=("score", "max")
        )
        return ScoreSet(grouped.index.to_numpy(), grouped["admit_month_year"].to_numpy(),
                        grouped["score"].to_numpy(), grouped["label"].to_numpy())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "encounter_id": self.encounter_ids,
            "admit_month_year": self.month_years,
            "score": self.scores,
            "label": self.labels,
        })


def _unpack(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(scores, ScoreSet):
        return scores.scores, scores.labels
    return np.asarray(scores, dtype=np.float64), np.asarray(labels, dtype=np.int64)


def auroc(scores, labels=None) -> float:
    """
    Mann-Whitney AUROC with midranks for ties:
    (sum of positive ranks - n1 (n1 + 1) / 2) / (n1 n0).

    Raises:
        UndefinedMetricError: only one label class present.
    """
    scores, labels = _unpack(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"AUROC needs both classes ({n_pos} positive, {n_neg} negative)")
    ranks = rankdata(scores, method="average")
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def brier(scores, labels=None) -> float:
    """Mean squared difference between max score and label."""
    scores, labels = _unpack(scores, labels)
    if len(scores) == 0:
        raise UndefinedMetricError("Brier score of an empty set")
    return float(np.mean((scores - labels) ** 2))


def percentile_threshold(reference, percentile: float = THRESHOLD_PERCENTILE) -> float:
    """Linear-interpolation percentile of the reference period's max scores."""
    values = reference.scores if isinstance(reference, ScoreSet) else np.asarray(reference, dtype=np.float64)
    if len(values) == 0:
        raise UndefinedMetricError("threshold of an empty reference set")
    return float(linear_percentile(values, percentile))


@dataclass(frozen=True)
class Confusion:
    """Counts at a threshold; ratios are None when their denominator is zero."""
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int

    @staticmethod
    def _ratio(num: int, den: int) -> Optional[float]:
        return num / den if den else None

    @property
    def sensitivity(self) -> Optional[float]:
        return self._ratio(self.tp, self.tp + self.fn)

    @property
    def specificity(self) -> Optional[float]:
        return self._ratio(self.tn, self.tn + self.fp)

    @property
    def ppv(self) -> Optional[float]:
        return self._ratio(self.tp, self.tp + self.fp)

    def to_dict(self) -> dict:
        return {
            'threshold': self.threshold, 'tp': self.tp, 'fp': self.fp, 'tn': self.tn, 'fn': self.fn,
            'sensitivity': self.sensitivity, 'specificity': self.specificity, 'ppv': self.ppv,
        }


def confusion_at(scores, threshold: float, labels=None) -> Confusion:
    """Predicted positive iff score >= threshold."""
    if not np.isfinite(threshold):
        raise ValueError(f"threshold must be finite, got {threshold}")
    scores, labels = _unpack(scores, labels)
    predicted = scores >= threshold
    positive = labels == 1
    return Confusion(
        threshold=float(threshold),
        tp=int(np.sum(predicted & positive)),
        fp=int(np.sum(predicted & ~positive)),
        tn=int(np.sum(~predicted & ~positive)),
        fn=int(np.sum(~predicted & positive)),
    )


def roc_points(scores, labels=None) -> pd.DataFrame:
    """ROC curve vertices (fpr, tpr, threshold), one per distinct score, from (0, 0)."""
    scores, labels = _unpack(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC curve needs both classes")
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    tps = np.cumsum(labels[order] == 1)
    fps = np.cumsum(labels[order] == 0)
    last_of_tie = np.r_[np.flatnonzero(np.diff(sorted_scores)), len(scores) - 1]
    return pd.DataFrame({
        "fpr": np.r_[0.0, fps[last_of_tie] / n_neg],
        "tpr": np.r_[0.0, tps[last_of_tie] / n_pos],
        "threshold": np.r_[np.inf, sorted_scores[last_of_tie]],
    })
