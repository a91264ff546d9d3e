"""
Cohort inclusion criteria, labels and the cohort characteristics table.
"""
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import pandas as pd

from ehr_model import EncounterMeta, RawExtract
from utils.constants import EARLY_OUTCOME_DAYS, HISTORY_LOOKBACK_DAYS, MIN_LOS_CALENDAR_DAYS, PRIOR_OUTCOME_WINDOW_DAYS
from utils.errors import DataError
from utils.timeline import calendar_days_touched, day_index

LOGGER = logging.getLogger(__name__)

EXCLUDE_SHORT_STAY = "short_stay"
EXCLUDE_EARLY_OUTCOME = "early_outcome"
EXCLUDE_RECENT_PRIOR = "recent_prior_outcome"


@dataclass
class InclusionResult:
    """Filtered extract, labels per kept encounter and exclusion reasons."""
    extract: RawExtract
    labels: Dict[str, int] = field(default_factory=dict)
    excluded: Dict[str, str] = field(default_factory=dict)

    def exclusion_counts(self) -> Counter:
        return Counter(self.excluded.values())


def outcome_day(meta: EncounterMeta) -> Optional[int]:
    """Day of stay (1 = admission day) of the outcome, if any."""
    if meta.outcome_time is None:
        return None
    return day_index(meta.outcome_time) - day_index(meta.admit_at) + 1


def exclusion_reason(meta: EncounterMeta) -> Optional[str]:
    """Why an encounter is excluded, or None."""
    if meta.admit_at is None or meta.discharge_at is None:
        raise DataError("missing admit or discharge time", source=meta.encounter_id)
    if calendar_days_touched(meta.admit_at, meta.discharge_at) < MIN_LOS_CALENDAR_DAYS:
        return EXCLUDE_SHORT_STAY
    day = outcome_day(meta)
    if day is not None and day <= EARLY_OUTCOME_DAYS:
        return EXCLUDE_EARLY_OUTCOME
    if meta.prior_outcome_time is not None:
        gap = day_index(meta.admit_at) - day_index(meta.prior_outcome_time)
        if 0 <= gap <= PRIOR_OUTCOME_WINDOW_DAYS:
            return EXCLUDE_RECENT_PRIOR
    return None


def apply_inclusion(raw: RawExtract, score_post_outcome_days: bool = False) -> InclusionResult:
    """
    Keep encounters of at least 3 calendar days without an outcome in the
    first two days or within 14 days before admission. Positive encounters
    keep only the days before the outcome day unless `score_post_outcome_days`.
    """
    labels: Dict[str, int] = {}
    excluded: Dict[str, str] = {}
    first_dropped: Dict[str, Optional[int]] = {}
    for encounter_id, meta in raw.encounters.items():
        reason = exclusion_reason(meta)
        if reason is not None:
            excluded[encounter_id] = reason
            continue
        day = outcome_day(meta)
        labels[encounter_id] = int(day is not None)
        first_dropped[encounter_id] = None if score_post_outcome_days else day

    rows = []
    for row in raw.rows:
        if row.encounter_id not in labels:
            continue
        cutoff = first_dropped[row.encounter_id]
        if cutoff is not None and row.day_of_stay >= cutoff:
            continue
        rows.append(row)

    kept = RawExtract(
        mode=raw.mode,
        rows=rows,
        encounters={eid: meta for eid, meta in raw.encounters.items() if eid in labels},
        outage_days=list(raw.outage_days),
    )
    LOGGER.info("inclusion kept %d of %d encounters (%s)", len(labels), len(raw.encounters),
                dict(Counter(excluded.values())), extra={"stage": "featurize"})
    return InclusionResult(kept, labels, excluded)


def _median_iqr(values) -> str:
    array = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if array.size == 0:
        return ""
    q1, median, q3 = np.percentile(array, [25, 50, 75])
    return f"{median:.1f} ({q1:.1f}-{q3:.1f})"


def _percent(count: int, total: int) -> str:
    return f"{100.0 * count / total:.1f}" if total else ""


def summarize_cohort(raw: RawExtract, labels: Dict[str, int]) -> pd.DataFrame:
    """Cohort characteristics: size, age, sex, stay length, history and incidence."""
    metas = [raw.encounters[eid] for eid in labels if eid in raw.encounters]
    n = len(metas)
    ages = [m.demographics.get("age") for m in metas]
    female = sum(1 for m in metas if m.demographics.get("gender") == "female")
    los = [calendar_days_touched(m.admit_at, m.discharge_at) for m in metas]
    lookback = HISTORY_LOOKBACK_DAYS
    history = sum(
        1 for m in metas
        if m.prior_outcome_time is not None and day_index(m.admit_at) - day_index(m.prior_outcome_time) <= lookback
    )
    positives = sum(int(labels[m.encounter_id]) for m in metas)
    return pd.DataFrame([
        ("n_encounters", str(n)),
        ("age_median_iqr", _median_iqr(ages)),
        ("female_percent", _percent(female, n)),
        ("los_days_median_iqr", _median_iqr(los)),
        ("history_of_outcome_past_year_percent", _percent(history, n)),
        ("outcome_incidence_percent", _percent(positives, n)),
    ], columns=["characteristic", "value"])
