"""
Sources of infrastructure shift: score concordance, feature discrepancy and
feature-group swaps between paired prospective and retrospective rows.
"""
import logging
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import sparse

from analysis.metrics import ScoreSet, auroc
from ehr_model import EncounterMeta
from features.alignment import PairedIndex, align_paired
from features.matrix import FeatureMatrix, canonical_csr
from features.taxonomy import FeatureTaxonomy
from risk_model import RiskModel, score_matrix
from utils.constants import DISCORDANCE_THRESHOLD, DISCREPANCY_HIST_BINS, FREQUENT_DISCREPANCY_RATE
from utils.errors import SchemaError
from utils.timeline import date_of

LOGGER = logging.getLogger(__name__)

ALL_GROUPS = "All feature groups"


# ---- score concordance -------------------------------------------------

@dataclass
class ConcordanceReport:
    """Retrospective vs prospective encounter max scores."""
    pairs: pd.DataFrame
    r: Optional[float]
    slope: Optional[float]
    intercept: Optional[float]
    threshold: float = DISCORDANCE_THRESHOLD

    @property
    def discordant(self) -> pd.DataFrame:
        return self.pairs[self.pairs["abs_diff"] >= self.threshold]

    def summary(self) -> pd.DataFrame:
        return pd.DataFrame([{
            "n_pairs": len(self.pairs), "pearson_r": self.r, "slope": self.slope, "intercept": self.intercept,
            "threshold": self.threshold, "n_discordant": len(self.discordant),
        }])


def outage_days_per_encounter(encounters: Dict[str, EncounterMeta], outage_days: Iterable[date]) -> Dict[str, int]:
    """Outage dates falling inside each encounter's stay."""
    outages = sorted(set(outage_days))
    counts = {}
    for encounter_id, meta in encounters.items():
        first, last = date_of(meta.admit_at), date_of(meta.discharge_at)
        counts[encounter_id] = sum(1 for d in outages if first <= d <= last)
    return counts


def score_concordance(ret_scores: pd.Series, pro_scores: pd.Series, threshold: float = DISCORDANCE_THRESHOLD,
                      outage_counts: Optional[Dict[str, int]] = None) -> ConcordanceReport:
    """
    Pearson r and least-squares fit (prospective on retrospective) of the
    encounter max scores scored by both pipelines.
    """
    joined = pd.concat({"ret_score": ret_scores, "pro_score": pro_scores}, axis=1, join="inner")
    joined.index.name = "encounter_id"
    pairs = joined.reset_index()
    pairs["diff"] = pairs["pro_score"] - pairs["ret_score"]
    pairs["abs_diff"] = pairs["diff"].abs()
    outage_counts = outage_counts or {}
    pairs["outage_days"] = [outage_counts.get(e, 0) for e in pairs["encounter_id"]]

    r = slope = intercept = None
    if len(pairs) >= 2:
        x = pairs["ret_score"].to_numpy()
        y = pairs["pro_score"].to_numpy()
        dx, dy = x - x.mean(), y - y.mean()
        sxx, syy, sxy = float(dx @ dx), float(dy @ dy), float(dx @ dy)
        if sxx > 0:
            slope = sxy / sxx
            intercept = float(y.mean() - slope * x.mean())
        if sxx > 0 and syy > 0:
            r = sxy / np.sqrt(sxx * syy)
    report = ConcordanceReport(pairs, r, slope, intercept, threshold)
    LOGGER.info("concordance over %d encounters: r=%s, %d discordant", len(pairs), r, len(report.discordant),
                extra={"stage": "gap"})
    return report


# ---- feature discrepancy -----------------------------------------------

@dataclass
class DiscrepancyReport:
    """Per-column mismatch rates over paired encounter-days."""
    rates: pd.DataFrame
    histogram: pd.DataFrame
    groups: pd.DataFrame
    n_rows: int

    def summary(self) -> dict:
        return {
            'n_rows': self.n_rows,
            'n_columns': len(self.rates),
            'n_any_discrepancy': int((self.rates["n_mismatch"] > 0).sum()),
            'n_frequent_discrepancy': int((self.rates["rate"] > FREQUENT_DISCREPANCY_RATE).sum()),
        }


def paired_matrices(pro: FeatureMatrix, ret: FeatureMatrix,
                    paired: Optional[PairedIndex] = None) -> Tuple[FeatureMatrix, FeatureMatrix]:
    """Rows of both matrices restricted to shared keys, in the same order."""
    paired = align_paired(pro, ret) if paired is None else paired
    return pro.take_rows(paired.pro_rows), ret.take_rows(paired.ret_rows)


def _group_rollups(columns_by_group: pd.DataFrame, taxonomy: Optional[FeatureTaxonomy]) -> pd.DataFrame:
    names = list(dict.fromkeys(columns_by_group["group"]))
    if taxonomy is not None:
        names = taxonomy.leaf_groups() + taxonomy.rollup_groups()
    records = []
    for name in names:
        leaves = set(taxonomy.descendant_leaves(name)) if taxonomy is not None else {name}
        subset = columns_by_group[columns_by_group["group"].isin(leaves)]
        if subset.empty:
            continue
        records.append({
            "group": name,
            "level": "leaf" if taxonomy is None or taxonomy.is_leaf(name) else "rollup",
            "n_columns": len(subset),
            "mean_rate": float(subset["rate"].mean()),
            "n_any_discrepancy": int((subset["n_mismatch"] > 0).sum()),
            "n_frequent_discrepancy": int((subset["rate"] > FREQUENT_DISCREPANCY_RATE).sum()),
        })
    return pd.DataFrame.from_records(
        records, columns=["group", "level", "n_columns", "mean_rate", "n_any_discrepancy", "n_frequent_discrepancy"]
    )


def feature_discrepancy(pro: FeatureMatrix, ret: FeatureMatrix, paired: Optional[PairedIndex] = None,
                        taxonomy: Optional[FeatureTaxonomy] = None) -> DiscrepancyReport:
    """
    Rate at which each column differs between X_pro and X_ret' on the same
    encounter-day.

    Raises:
        SchemaError: the matrices have different columns.
    """
    if list(pro.columns) != list(ret.columns):
        raise SchemaError("discrepancy needs identical column sets")
    xp, xr = paired_matrices(pro, ret, paired)
    n_rows = xp.n_rows
    mismatch = abs(xp.X - xr.X)
    counts = np.asarray(mismatch.sum(axis=0)).ravel().astype(np.int64)
    rates = counts / n_rows if n_rows else np.zeros(len(counts))
    groups = pro.column_groups or [""] * len(pro.columns)
    table = pd.DataFrame({"column": pro.columns, "group": groups, "n_mismatch": counts, "rate": rates})
    edges = np.linspace(0.0, 1.0, DISCREPANCY_HIST_BINS + 1)
    hist, _ = np.histogram(rates, bins=edges)
    histogram = pd.DataFrame({"bin_lower": edges[:-1], "bin_upper": edges[1:], "count": hist})
    report = DiscrepancyReport(table, histogram, _group_rollups(table, taxonomy), n_rows)
    LOGGER.info("discrepancy over %d paired rows: %s", n_rows, report.summary(), extra={"stage": "gap"})
    return report


# ---- feature-group swap ------------------------------------------------

@dataclass
class SwapResult:
    """AUROC after swapping one group's columns from X_ret' into X_pro."""
    group: str
    level: str
    n_columns: int
    auroc: float
    baseline: float

    @property
    def difference(self) -> float:
        return self.auroc - self.baseline

    def formatted(self) -> str:
        return f"{self.group}, {self.auroc:.3f}, {self.difference:+.3f}"


def swap_columns(xp: sparse.csr_matrix, xr: sparse.csr_matrix, columns: np.ndarray) -> sparse.csr_matrix:
    """X_pro with `columns` taken from X_ret' (same rows), in canonical form."""
    mask = np.zeros(xp.shape[1])
    mask[columns] = 1.0
    keep = sparse.diags(1.0 - mask)
    take = sparse.diags(mask)
    return canonical_csr(xp @ keep + xr @ take)


def _paired_auroc(matrix: FeatureMatrix, model: RiskModel) -> float:
    return auroc(ScoreSet.from_daily(matrix.rows, score_matrix(model, matrix)))


def feature_swap(pro: FeatureMatrix, ret: FeatureMatrix, group: str, model: RiskModel,
                 taxonomy: FeatureTaxonomy, baseline: Optional[float] = None,
                 paired: Optional[PairedIndex] = None) -> SwapResult:
    """
    Copy the group's columns from X_ret' into a working copy of the paired
    X_pro rows, rescore every day and recompute encounter AUROC.

    Raises:
        TaxonomyError: unknown group.
    """
    xp, xr = paired_matrices(pro, ret, paired)
    return _swap_paired(xp, xr, group, model, taxonomy, baseline)


def _swap_paired(xp: FeatureMatrix, xr: FeatureMatrix, group: str, model: RiskModel,
                 taxonomy: FeatureTaxonomy, baseline: Optional[float]) -> SwapResult:
    if group == ALL_GROUPS:
        columns, level = np.arange(xp.n_cols), "all"
    else:
        taxonomy.group(group)
        columns = xp.group_columns(group, taxonomy)
        level = "leaf" if taxonomy.is_leaf(group) else "rollup"
    if baseline is None:
        baseline = _paired_auroc(xp, model)
    swapped = FeatureMatrix(swap_columns(xp.X, xr.X, columns), xp.rows, list(xp.columns), list(xp.column_groups))
    return SwapResult(group, level, int(len(columns)), _paired_auroc(swapped, model), baseline)


def first_half_window(matrix: FeatureMatrix) -> Tuple[date, date]:
    """First half of the calendar span of a matrix's rows."""
    dates = matrix.rows["date"]
    start, end = min(dates), max(dates)
    return start, start + timedelta(days=(end - start).days // 2)


def feature_swap_table(pro: FeatureMatrix, ret: FeatureMatrix, model: RiskModel, taxonomy: FeatureTaxonomy,
                       window: Optional[Tuple[date, date]] = None) -> pd.DataFrame:
    """
    Swap every leaf group, every roll-up group and all groups together.
    Rows sorted by level, then by difference (largest first).
    """
    if window is not None:
        pro, ret = pro.restrict_window(*window), ret.restrict_window(*window)
    xp, xr = paired_matrices(pro, ret)
    baseline = _paired_auroc(xp, model)
    results: List[SwapResult] = []
    for group in taxonomy.leaf_groups() + taxonomy.rollup_groups() + [ALL_GROUPS]:
        results.append(_swap_paired(xp, xr, group, model, taxonomy, baseline))
    table = pd.DataFrame([{
        "group": r.group, "level": r.level, "n_columns": r.n_columns, "auroc": r.auroc,
        "baseline": r.baseline, "difference": r.difference, "formatted": r.formatted(),
    } for r in results])
    order = {"leaf": 0, "rollup": 1, "all": 2}
    table = table.assign(_level=table["level"].map(order)).sort_values(
        ["_level", "difference"], ascending=[True, False], kind="mergesort"
    ).drop(columns="_level").reset_index(drop=True)
    LOGGER.info("swap baseline AUROC %.4f over %d paired rows", baseline, xp.n_rows, extra={"stage": "swap"})
    return table
