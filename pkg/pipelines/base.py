"""
Base pipeline: cohort selection and assembly of encounter-day rows.
"""
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from ehr_model import DayRecord, EncounterMeta, EncounterTruth, EventRecord, RawExtract
from pipelines.config import PipelineConfig
from utils.constants import COHORT_CENSUS, MIN_LOS_CALENDAR_DAYS
from utils.rng import stream
from utils.timeline import calendar_days_touched, date_of_index, day_index

# (feature_id, effective occurred_at, entered_at, value, carry_forward)
VisibleEvent = Tuple[int, int, int, Any, bool]


class BasePipeline:
    """Base class for extraction pipelines."""

    lag_stream = "lag"

    def __init__(self, config: PipelineConfig):
        self.config = config

    def select_cohort(self, truth: Sequence[EncounterTruth], as_of: int) -> Set[str]:
        """Encounter ids this pipeline identifies as hospitalized >= 3 calendar days."""
        if self.config.cohort_source == COHORT_CENSUS:
            return {t.encounter_id for t in truth if _census_days(t, as_of) >= MIN_LOS_CALENDAR_DAYS}
        cohort = set()
        for t in truth:
            if t.admit_at > as_of or not t.is_inpatient_at(as_of):
                continue
            if calendar_days_touched(t.admit_at, min(t.discharge_at, as_of)) >= MIN_LOS_CALENDAR_DAYS:
                cohort.add(t.encounter_id)
        return cohort

    def extract(self, truth: Sequence[EncounterTruth], as_of: int,
                encounter_ids: Optional[Iterable[str]] = None) -> RawExtract:
        """
        Rows visible to this pipeline for the encounters in its cohort, or for
        exactly `encounter_ids` when given.
        """
        self.check_bounds(truth, as_of)
        if encounter_ids is None:
            cohort = self.select_cohort(truth, as_of)
        else:
            cohort = set(encounter_ids)
        extract = RawExtract(mode=self.config.mode, outage_days=list(self.config.outage_days))
        for encounter in truth:
            if encounter.encounter_id not in cohort:
                continue
            extract.encounters[encounter.encounter_id] = EncounterMeta.from_truth(encounter)
            extract.rows.extend(self.encounter_rows(encounter, as_of))
        return extract

    def check_bounds(self, truth: Sequence[EncounterTruth], as_of: int):
        """Raise when `as_of` precedes data the pipeline must see."""

    def encounter_rows(self, encounter: EncounterTruth, as_of: int) -> List[DayRecord]:
        """
        Rows for one encounter.
        Must be implemented by subclasses.
        """
        raise NotImplementedError("Subclasses must implement encounter_rows()")

    def draw_lags(self, encounter_id: str, count: int) -> np.ndarray:
        """Per-item extraction lags in minutes, deterministic per encounter."""
        low, high = self.config.extraction_lag
        if low == high:
            return np.full(count, low, dtype=np.int64)
        rng = stream(self.config.seed, self.lag_stream, encounter_id)
        return rng.integers(low, high + 1, size=count)


def _census_days(encounter: EncounterTruth, as_of: int) -> int:
    """Distinct calendar days covered by census intervals up to `as_of`."""
    days = set()
    for start, end in encounter.census_intervals:
        if start > as_of:
            continue
        end = min(end, as_of)
        days.update(range(day_index(start), day_index(end) + 1))
    return len(days)


def event_view(event: EventRecord, visible_at: int, state_at: int) -> Optional[VisibleEvent]:
    """An event as seen by a pipeline: entered by `visible_at`, valued at `state_at`."""
    if event.entered_at > visible_at:
        return None
    state = event.state_at(max(state_at, event.entered_at))
    if state is None:
        return None
    occurred_at, value = state
    return (event.feature_id, occurred_at, event.entered_at, value, event.carry_forward)


def day_values(visible: Iterable[VisibleEvent], day: int) -> Dict[int, Any]:
    """
    Values for calendar day `day`: daily facts occurring that day, static facts
    occurring on or before it; the latest (occurred_at, entered_at) wins.
    """
    chosen: Dict[int, Tuple[int, int, Any]] = {}
    for feature_id, occurred_at, entered_at, value, carry_forward in visible:
        occurred_day = day_index(occurred_at)
        if carry_forward:
            if occurred_day > day:
                continue
        elif occurred_day != day:
            continue
        current = chosen.get(feature_id)
        if current is None or (occurred_at, entered_at) >= (current[0], current[1]):
            chosen[feature_id] = (occurred_at, entered_at, value)
    return {feature_id: chosen[feature_id][2] for feature_id in sorted(chosen)}


def make_row(encounter: EncounterTruth, day: int, values: Dict[int, Any]) -> DayRecord:
    """Build the row for calendar day index `day` of an encounter."""
    return DayRecord(
        encounter_id=encounter.encounter_id,
        date=date_of_index(day),
        day_of_stay=day - day_index(encounter.admit_at) + 1,
        values=values,
    )
