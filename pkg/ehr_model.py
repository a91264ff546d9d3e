"""
Core EHR model: events with their revision trail, encounters, and the raw
encounter-day extracts produced by a pipeline.
"""
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Set, Tuple

from utils.constants import CLASS_INPATIENT
from utils.errors import DataError
from utils.timeline import calendar_days_touched, date_of, month_year


class RevisionKind(Enum):
    """Revision kind enumeration."""
    UPDATE = "update"
    BACKDATE = "backdate"
    CANCEL = "cancel"


@dataclass(frozen=True)
class RevisionRecord:
    """A later change to an event's value (or occurrence time)."""
    revised_at: int
    new_value: Any
    kind: RevisionKind
    new_occurred_at: Optional[int] = None


@dataclass
class EventRecord:
    """One clinical fact with its occurrence time, entry time and revisions."""
    encounter_id: str
    feature_id: int
    occurred_at: int
    entered_at: int
    value: Any
    revisions: List[RevisionRecord] = field(default_factory=list)
    carry_forward: bool = False  # static fact: applies to every later day of the stay

    def validate(self):
        """Check entry and revision ordering."""
        if self.entered_at < self.occurred_at:
            raise DataError(f"event for feature {self.feature_id} entered before it occurred",
                            source=self.encounter_id)
        last = self.entered_at
        for i, revision in enumerate(self.revisions):
            if revision.revised_at <= last:
                raise DataError(f"revisions of feature {self.feature_id} are not strictly increasing",
                                source=self.encounter_id)
            if revision.kind == RevisionKind.CANCEL and i != len(self.revisions) - 1:
                raise DataError(f"cancel revision of feature {self.feature_id} is not the last one",
                                source=self.encounter_id)
            last = revision.revised_at

    def state_at(self, moment: int) -> Optional[Tuple[int, Any]]:
        """
        Effective (occurred_at, value) after applying revisions made up to
        `moment`; None when the event is not yet entered or was cancelled.
        """
        if self.entered_at > moment:
            return None
        occurred_at, value = self.occurred_at, self.value
        for revision in self.revisions:
            if revision.revised_at > moment:
                break
            if revision.kind == RevisionKind.CANCEL:
                return None
            value = revision.new_value
            if revision.kind == RevisionKind.BACKDATE and revision.new_occurred_at is not None:
                occurred_at = revision.new_occurred_at
        return occurred_at, value

    def settled_state(self) -> Optional[Tuple[int, Any]]:
        """State after every revision."""
        last = self.revisions[-1].revised_at if self.revisions else self.entered_at
        return self.state_at(last)


@dataclass
class EncounterTruth:
    """Ground truth for one hospital encounter."""
    encounter_id: str
    patient_id: str
    admit_at: int
    discharge_at: int
    true_class_code_history: List[Tuple[int, str]] = field(default_factory=list)
    census_intervals: List[Tuple[int, int]] = field(default_factory=list)
    outcome_positive: bool = False
    outcome_time: Optional[int] = None
    events: List[EventRecord] = field(default_factory=list)
    demographics: Dict[str, Any] = field(default_factory=dict)
    prior_outcome_time: Optional[int] = None
    period_index: int = 0

    def validate(self):
        """Check the encounter invariants."""
        if self.discharge_at <= self.admit_at:
            raise DataError("discharge must follow admission", source=self.encounter_id)
        if self.outcome_positive:
            if self.outcome_time is None or not self.admit_at <= self.outcome_time <= self.discharge_at:
                raise DataError("outcome time must fall inside the stay", source=self.encounter_id)
        for event in self.events:
            event.validate()

    @property
    def n_calendar_days(self) -> int:
        return calendar_days_touched(self.admit_at, self.discharge_at)

    def class_code_at(self, moment: int) -> Optional[str]:
        """Latest class code recorded at or before `moment`."""
        code = None
        for recorded_at, value in self.true_class_code_history:
            if recorded_at <= moment:
                code = value
        return code

    def is_inpatient_at(self, moment: int) -> bool:
        return self.class_code_at(moment) == CLASS_INPATIENT


@dataclass
class EncounterMeta:
    """Admission metadata carried alongside an extract."""
    encounter_id: str
    patient_id: str
    admit_at: Optional[int]
    discharge_at: Optional[int]
    outcome_time: Optional[int] = None
    prior_outcome_time: Optional[int] = None
    demographics: Dict[str, Any] = field(default_factory=dict)
    period_index: int = 0

    @staticmethod
    def from_truth(truth: EncounterTruth) -> 'EncounterMeta':
        """Build metadata from an encounter's truth."""
        return EncounterMeta(
            encounter_id=truth.encounter_id,
            patient_id=truth.patient_id,
            admit_at=truth.admit_at,
            discharge_at=truth.discharge_at,
            outcome_time=truth.outcome_time if truth.outcome_positive else None,
            prior_outcome_time=truth.prior_outcome_time,
            demographics=dict(truth.demographics),
            period_index=truth.period_index,
        )

    @property
    def admit_date(self) -> date:
        return date_of(self.admit_at)

    @property
    def admit_month_year(self) -> str:
        return month_year(self.admit_date)

    def to_dict(self) -> dict:
        return {
            'encounter_id': self.encounter_id,
            'patient_id': self.patient_id,
            'admit_at': self.admit_at,
            'discharge_at': self.discharge_at,
            'outcome_time': self.outcome_time,
            'prior_outcome_time': self.prior_outcome_time,
            'demographics': self.demographics,
            'period_index': self.period_index,
        }

    @staticmethod
    def from_dict(data: dict) -> 'EncounterMeta':
        return EncounterMeta(
            encounter_id=data['encounter_id'],
            patient_id=data.get('patient_id', ''),
            admit_at=data.get('admit_at'),
            discharge_at=data.get('discharge_at'),
            outcome_time=data.get('outcome_time'),
            prior_outcome_time=data.get('prior_outcome_time'),
            demographics=data.get('demographics', {}),
            period_index=data.get('period_index', 0),
        )


@dataclass
class DayRecord:
    """Event values visible to one pipeline for one encounter-day."""
    encounter_id: str
    date: date
    day_of_stay: int
    values: Dict[int, Any] = field(default_factory=dict)

    @property
    def key(self) -> Tuple[str, date]:
        return (self.encounter_id, self.date)


@dataclass
class RawExtract:
    """Encounter-day rows produced by one pipeline over one period."""
    mode: str
    rows: List[DayRecord] = field(default_factory=list)
    encounters: Dict[str, EncounterMeta] = field(default_factory=dict)
    outage_days: List[date] = field(default_factory=list)

    def keys(self) -> Set[Tuple[str, date]]:
        return {row.key for row in self.rows}

    def encounter_ids(self) -> List[str]:
        return list(self.encounters)

    def rows_by_key(self) -> Dict[Tuple[str, date], DayRecord]:
        return {row.key: row for row in self.rows}

    def restrict(self, encounter_ids: Iterable[str]) -> 'RawExtract':
        """Keep only the given encounters."""
        keep = set(encounter_ids)
        return RawExtract(
            mode=self.mode,
            rows=[row for row in self.rows if row.encounter_id in keep],
            encounters={eid: meta for eid, meta in self.encounters.items() if eid in keep},
            outage_days=list(self.outage_days),
        )

    def __len__(self) -> int:
        return len(self.rows)
