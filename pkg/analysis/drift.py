"""
Temporal drift of feature prevalence between two periods.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import pandas as pd
from scipy.stats import norm

from features.matrix import FeatureMatrix
from features.taxonomy import FeatureTaxonomy
from utils.constants import DRIFT_ALPHA
from utils.errors import DataError, SchemaError
from utils.rng import stream

LOGGER = logging.getLogger(__name__)


@dataclass
class DriftReport:
    """Per-column two-proportion z-tests with a Bonferroni cut at alpha / n_tested."""
    table: pd.DataFrame
    groups: pd.DataFrame
    alpha: float
    n_tested: int
    skipped: List[str]

    @property
    def threshold(self) -> float:
        return self.alpha / self.n_tested if self.n_tested else 0.0

    @property
    def significant(self) -> pd.DataFrame:
        return self.table[self.table["significant"]]


def sample_one_day(matrix: FeatureMatrix, seed: int) -> np.ndarray:
    """One row per encounter, drawn from stream (seed, "drift", encounter_id)."""
    picks = []
    for encounter_id, rows in matrix.rows.groupby("encounter_id", sort=False).indices.items():
        rng = stream(seed, "drift", encounter_id)
        picks.append(int(rows[rng.integers(0, len(rows))]))
    return np.sort(np.asarray(picks, dtype=np.int64))


def temporal_drift_test(first: FeatureMatrix, second: FeatureMatrix, alpha: float = DRIFT_ALPHA, seed: int = 0,
                        taxonomy: Optional[FeatureTaxonomy] = None) -> DriftReport:
    """
    Pooled two-proportion z-test per column on one sampled day per encounter
    in each period. Columns never (or always) active in both samples are
    skipped and do not count towards the Bonferroni denominator.

    Raises:
        SchemaError: the matrices have different columns.
        DataError: a period has no rows.
    """
    if list(first.columns) != list(second.columns):
        raise SchemaError("drift test needs identical column sets")
    if first.n_rows == 0 or second.n_rows == 0:
        raise DataError("drift test needs rows in both periods")

    a = first.X[sample_one_day(first, seed)]
    b = second.X[sample_one_day(second, seed)]
    n1, n2 = a.shape[0], b.shape[0]
    c1 = np.asarray(a.sum(axis=0)).ravel()
    c2 = np.asarray(b.sum(axis=0)).ravel()
    p1, p2 = c1 / n1, c2 / n2
    pooled = (c1 + c2) / (n1 + n2)
    tested = (pooled > 0) & (pooled < 1)
    n_tested = int(tested.sum())

    z = np.zeros(len(c1))
    se = np.sqrt(pooled * (1 - pooled) * (1.0 / n1 + 1.0 / n2))
    z[tested] = (p1[tested] - p2[tested]) / se[tested]
    p_values = np.where(tested, 2.0 * norm.sf(np.abs(z)), np.nan)
    cut = alpha / n_tested if n_tested else 0.0
    significant = tested & (np.nan_to_num(p_values, nan=1.0) <= cut)

    groups = first.column_groups or [""] * len(first.columns)
    table = pd.DataFrame({
        "column": first.columns, "group": groups, "n1": n1, "n2": n2, "p1": p1, "p2": p2,
        "z": np.where(tested, z, np.nan), "p_value": p_values, "tested": tested, "significant": significant,
    })
    skipped = [c for c, t in zip(first.columns, tested) if not t]
    report = DriftReport(table, _group_counts(table, taxonomy), alpha, n_tested, skipped)
    LOGGER.info("drift: %d of %d tested columns significant (alpha/d = %.3g), %d skipped",
                int(significant.sum()), n_tested, cut, len(skipped), extra={"stage": "drift"})
    return report


def _group_counts(table: pd.DataFrame, taxonomy: Optional[FeatureTaxonomy]) -> pd.DataFrame:
    names = taxonomy.leaf_groups() + taxonomy.rollup_groups() if taxonomy is not None \
        else list(dict.fromkeys(table["group"]))
    records = []
    for name in names:
        leaves = set(taxonomy.descendant_leaves(name)) if taxonomy is not None else {name}
        subset = table[table["group"].isin(leaves)]
        if subset.empty:
            continue
        records.append({
            "group": name,
            "n_columns": len(subset),
            "n_tested": int(subset["tested"].sum()),
            "n_significant": int(subset["significant"].sum()),
        })
    return pd.DataFrame.from_records(records, columns=["group", "n_columns", "n_tested", "n_significant"])
