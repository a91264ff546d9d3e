"""
Performance-gap decomposition.

With s = -1 for lower-is-better measures and +1 otherwise:
    gap        = s (p_ret  - p_pro)
    gap_time   = s (p_ret  - p_ret')
    gap_infra  = s (p_ret' - p_pro)
so that gap = gap_time + gap_infra.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from analysis.bootstrap import MetricCI, interval, resolve_metric
from analysis.metrics import ScoreSet
from analysis.registry import MetricRegistry
from utils.constants import BOOTSTRAP_REPLICATES, CI_LEVEL, MAX_REDRAWS
from utils.errors import UndefinedMetricError
from utils.rng import stream

LOGGER = logging.getLogger(__name__)

GAP_QUANTITIES = ("p_ret", "p_ret_prime", "p_pro", "gap", "gap_time", "gap_infra")


def performance_gap(p_ret: float, p_ret_prime: float, p_pro: float, negate: bool = False) -> Tuple[float, float, float]:
    """(gap, gap_time, gap_infra) for three point estimates of one measure."""
    sign = -1.0 if negate else 1.0
    return sign * (p_ret - p_pro), sign * (p_ret - p_ret_prime), sign * (p_ret_prime - p_pro)


@dataclass
class GapReport:
    """Measure values on D_ret, D_ret', D_pro and the three gaps, each with a CI."""
    measure: str
    negate: bool
    p_ret: MetricCI
    p_ret_prime: MetricCI
    p_pro: MetricCI
    gap: MetricCI
    gap_time: MetricCI
    gap_infra: MetricCI
    n_redraws: int = 0

    def identity_residual(self) -> float:
        return self.gap.point - (self.gap_time.point + self.gap_infra.point)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for name in GAP_QUANTITIES:
            ci: MetricCI = getattr(self, name)
            rows.append((self.measure, name, ci.point, ci.lower, ci.upper, ci.n, ci.n_pos, self.negate))
        return pd.DataFrame(rows, columns=["metric", "quantity", "point", "lower", "upper", "n", "n_pos", "negated"])


def _replicate(scores: ScoreSet, fn, seed: int, k: int, j: int) -> Tuple[float, int]:
    """Replicate k of dataset j from stream (seed, k, j); redraws from (seed, k, j, attempt)."""
    n = len(scores)
    for attempt in range(MAX_REDRAWS + 1):
        rng = stream(seed, k, j) if attempt == 0 else stream(seed, k, j, attempt)
        try:
            return fn(scores.take(rng.integers(0, n, size=n))), attempt
        except UndefinedMetricError:
            continue
    raise UndefinedMetricError(f"replicate {k} of dataset {j} stayed undefined after {MAX_REDRAWS} redraws")


def gap_bootstrap(ret: ScoreSet, ret_prime: ScoreSet, pro: ScoreSet, measure: str = "auroc",
                  n_replicates: int = BOOTSTRAP_REPLICATES, seed: int = 0, ci_level: float = CI_LEVEL,
                  threshold: Optional[float] = None, negate: Optional[bool] = None) -> GapReport:
    """
    Resample each dataset independently per replicate, recompute the three
    measures and gaps, and take empirical percentile CIs.
    """
    fn = resolve_metric(measure, threshold)
    if negate is None:
        negate = not MetricRegistry.get(measure).higher_is_better
    datasets = (ret, ret_prime, pro)
    points = [fn(d) for d in datasets]
    point_gaps = performance_gap(*points, negate=negate)

    values = np.empty((n_replicates, 6))
    redraws = 0
    for k in range(n_replicates):
        replicate = []
        for j, dataset in enumerate(datasets):
            value, extra = _replicate(dataset, fn, seed, k, j)
            replicate.append(value)
            redraws += extra
        values[k, :3] = replicate
        values[k, 3:] = performance_gap(*replicate, negate=negate)

    def ci(column: int, point: float, source: Optional[ScoreSet]) -> MetricCI:
        lower, upper = interval(values[:, column], ci_level) if n_replicates else (point, point)
        n = len(source) if source is not None else 0
        n_pos = source.n_pos if source is not None else 0
        return MetricCI(point, lower, upper, n_replicates, 0, n, n_pos, measure)

    report = GapReport(
        measure=measure,
        negate=negate,
        p_ret=ci(0, points[0], ret),
        p_ret_prime=ci(1, points[1], ret_prime),
        p_pro=ci(2, points[2], pro),
        gap=ci(3, point_gaps[0], None),
        gap_time=ci(4, point_gaps[1], None),
        gap_infra=ci(5, point_gaps[2], None),
        n_redraws=redraws,
    )
    LOGGER.info("%s gap %.4f = time %.4f + infra %.4f", measure, *point_gaps, extra={"stage": "gap"})
    return report
