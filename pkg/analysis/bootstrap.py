"""
Encounter-level bootstrap confidence intervals.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from analysis.metrics import ScoreSet
from analysis.registry import MetricRegistry
from utils.constants import BOOTSTRAP_REPLICATES, CI_LEVEL, MAX_REDRAWS
from utils.errors import UndefinedMetricError
from utils.rng import Key, stream

LOGGER = logging.getLogger(__name__)

Metric = Union[str, Callable[[ScoreSet], float]]


@dataclass
class MetricCI:
    """Point estimate and empirical bootstrap interval."""
    point: Optional[float]
    lower: Optional[float]
    upper: Optional[float]
    n_replicates: int = BOOTSTRAP_REPLICATES
    n_redraws: int = 0
    n: int = 0
    n_pos: int = 0
    metric: str = ""

    @property
    def defined(self) -> bool:
        return self.point is not None

    def to_dict(self) -> dict:
        return {
            'metric': self.metric, 'point': self.point, 'lower': self.lower, 'upper': self.upper,
            'n': self.n, 'n_pos': self.n_pos, 'n_replicates': self.n_replicates, 'n_redraws': self.n_redraws,
        }


def resolve_metric(metric: Metric, threshold: Optional[float] = None) -> Callable[[ScoreSet], float]:
    return MetricRegistry.create(metric, threshold) if isinstance(metric, str) else metric


def resample_indices(n: int, seed: int, keys: Sequence[Key], replicate: int, attempt: int = 0) -> np.ndarray:
    """Indices of replicate `replicate`; redraws come from (…, replicate, attempt)."""
    rng = stream(seed, *keys, replicate) if attempt == 0 else stream(seed, *keys, replicate, attempt)
    return rng.integers(0, n, size=n)


def replicate_value(scores: ScoreSet, fn: Callable[[ScoreSet], float], seed: int,
                    keys: Sequence[Key], replicate: int) -> tuple:
    """(value, redraws) of one replicate; undefined resamples are redrawn."""
    for attempt in range(MAX_REDRAWS + 1):
        sample = scores.take(resample_indices(len(scores), seed, keys, replicate, attempt))
        try:
            return fn(sample), attempt
        except UndefinedMetricError:
            continue
    raise UndefinedMetricError(f"replicate {replicate} stayed undefined after {MAX_REDRAWS} redraws")


def interval(values: np.ndarray, ci_level: float = CI_LEVEL) -> tuple:
    tail = 100.0 * (1.0 - ci_level) / 2.0
    lower, upper = np.percentile(values, [tail, 100.0 - tail], method="linear")
    return float(lower), float(upper)


def bootstrap_ci(scores: ScoreSet, metric: Metric, n_replicates: int = BOOTSTRAP_REPLICATES,
                 seed: int = 0, ci_level: float = CI_LEVEL, threshold: Optional[float] = None,
                 keys: Sequence[Key] = ()) -> MetricCI:
    """
    Resample encounters with replacement; replicate k comes from stream
    (seed, *keys, k). Replicates where the measure is undefined (e.g. a
    single class for AUROC) are redrawn and counted.

    Raises:
        UndefinedMetricError: the measure is undefined on the full set.
    """
    fn = resolve_metric(metric, threshold)
    name = metric if isinstance(metric, str) else getattr(metric, "__name__", "metric")
    point = fn(scores)
    values = np.empty(n_replicates)
    redraws = 0
    for k in range(n_replicates):
        values[k], extra = replicate_value(scores, fn, seed, keys, k)
        redraws += extra
    if redraws:
        LOGGER.debug("%s: %d bootstrap redraws", name, redraws, extra={"stage": "evaluate"})
    lower, upper = interval(values, ci_level) if n_replicates else (point, point)
    return MetricCI(point, lower, upper, n_replicates, redraws, len(scores), scores.n_pos, name)


def undefined_ci(scores: ScoreSet, metric: str, n_replicates: int = BOOTSTRAP_REPLICATES) -> MetricCI:
    """Marker result for a set failing the measure's precondition."""
    return MetricCI(None, None, None, n_replicates, 0, len(scores), scores.n_pos, metric)
