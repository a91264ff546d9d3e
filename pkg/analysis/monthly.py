"""
Month-year tables of a measure, and comparisons between two periods.
"""
import logging
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from analysis.bootstrap import Metric, bootstrap_ci, interval, replicate_value, resolve_metric, undefined_ci
from analysis.metrics import ScoreSet
from utils.constants import BOOTSTRAP_REPLICATES, CI_LEVEL
from utils.errors import UndefinedMetricError

LOGGER = logging.getLogger(__name__)

MONTHLY_COLUMNS = ["month_year", "cycle", "month", "metric", "point", "lower", "upper", "n", "n_pos", "defined"]
MONTH_KEY = ["cycle", "month"]


def month_keys(month_years) -> Dict[Tuple[int, str], str]:
    """
    (cycle, calendar month) for each month-year of a period, where cycle
    counts whole years since the period's first month. Periods of up to
    twelve months only use cycle 0, so calendar months line up across years.
    """
    ordered = sorted(set(month_years))
    if not ordered:
        return {}
    first = _month_index(ordered[0])
    return {((_month_index(m) - first) // 12, m[5:7]): m for m in ordered}


def _month_index(month_year: str) -> int:
    return int(month_year[:4]) * 12 + int(month_year[5:7]) - 1


def monthly_metric(scores: ScoreSet, metric: Metric, n_replicates: int = BOOTSTRAP_REPLICATES,
                   seed: int = 0, threshold: Optional[float] = None) -> pd.DataFrame:
    """
    Measure and bootstrap CI per admission month-year. Months where the
    measure is undefined stay in the table with `defined` False.
    """
    name = metric if isinstance(metric, str) else getattr(metric, "__name__", "metric")
    cycles = {month_year: key[0] for key, month_year in month_keys(scores.months()).items()}
    records = []
    for month_year in scores.months():
        subset = scores.for_month(month_year)
        try:
            ci = bootstrap_ci(subset, metric, n_replicates, seed, threshold=threshold, keys=(month_year,))
        except UndefinedMetricError:
            ci = undefined_ci(subset, name, n_replicates)
        records.append((month_year, cycles[month_year], month_year[5:7], name, ci.point, ci.lower, ci.upper,
                        ci.n, ci.n_pos, ci.defined))
    return pd.DataFrame(records, columns=MONTHLY_COLUMNS)


def compare_monthly(table_a: pd.DataFrame, table_b: pd.DataFrame) -> pd.DataFrame:
    """Outer join of two monthly tables on (cycle, calendar month); one row per month present in either."""
    keep = ["cycle", "month", "month_year", "point", "lower", "upper", "n", "n_pos", "defined"]
    joined = table_a[keep].merge(table_b[keep], on=MONTH_KEY, how="outer", suffixes=("_a", "_b"))
    return joined.sort_values(MONTH_KEY).reset_index(drop=True)


def _overlap(a_lower, a_upper, b_lower, b_upper) -> Optional[bool]:
    if None in (a_lower, a_upper, b_lower, b_upper) or any(pd.isna([a_lower, a_upper, b_lower, b_upper])):
        return None
    return bool(a_lower <= b_upper and b_lower <= a_upper)


def monthly_difference_test(a: ScoreSet, b: ScoreSet, metric: Metric, n_replicates: int = BOOTSTRAP_REPLICATES,
                            seed: int = 0, ci_level: float = CI_LEVEL,
                            threshold: Optional[float] = None) -> pd.DataFrame:
    """
    Per (cycle, calendar month), the CI-overlap flag of the two periods and a
    bootstrap CI of the difference b - a (each side resampled from its own
    stream); `bootstrap_diff` is True when that CI excludes zero.
    """
    fn = resolve_metric(metric, threshold)
    name = metric if isinstance(metric, str) else getattr(metric, "__name__", "metric")
    months_a = month_keys(a.months())
    months_b = month_keys(b.months())
    records = []
    for key in sorted(set(months_a) | set(months_b)):
        cycle, month = key
        record = {"cycle": cycle, "month": month, "metric": name, "point_a": None, "point_b": None, "diff": None,
                  "diff_lower": None, "diff_upper": None, "ci_overlap": None, "bootstrap_diff": None}
        if key in months_a and key in months_b:
            sub_a, sub_b = a.for_month(months_a[key]), b.for_month(months_b[key])
            try:
                ci_a = bootstrap_ci(sub_a, fn, n_replicates, seed, ci_level, keys=("a", cycle, month))
                ci_b = bootstrap_ci(sub_b, fn, n_replicates, seed, ci_level, keys=("b", cycle, month))
                diffs = np.array([
                    replicate_value(sub_b, fn, seed, ("b", cycle, month), k)[0]
                    - replicate_value(sub_a, fn, seed, ("a", cycle, month), k)[0]
                    for k in range(n_replicates)
                ])
            except UndefinedMetricError:
                LOGGER.info("month %s (cycle %d): %s undefined in one period", month, cycle, name,
                            extra={"stage": "evaluate"})
                records.append(record)
                continue
            lower, upper = interval(diffs, ci_level)
            record.update({
                "point_a": ci_a.point, "point_b": ci_b.point, "diff": ci_b.point - ci_a.point,
                "diff_lower": lower, "diff_upper": upper,
                "ci_overlap": _overlap(ci_a.lower, ci_a.upper, ci_b.lower, ci_b.upper),
                "bootstrap_diff": bool(lower > 0 or upper < 0),
            })
        records.append(record)
    return pd.DataFrame.from_records(records)
