from datetime import date

import pytest

from ehr_model import DayRecord, EncounterMeta, RawExtract, RevisionKind, RevisionRecord
from utils.constants import CLASS_INPATIENT, CLASS_OUTPATIENT
from utils.errors import DataError

from conftest import at, event, make_encounter


def test_state_before_entry_is_invisible():
    e = event(1, at(2020, 7, 10, 8), entered_at=at(2020, 7, 10, 9))
    assert e.state_at(at(2020, 7, 10, 8, 30)) is None
    assert e.state_at(at(2020, 7, 10, 9)) == (at(2020, 7, 10, 8), "1")


def test_update_revision_applies_after_revised_at():
    revision = RevisionRecord(at(2020, 7, 11, 12), "1", RevisionKind.UPDATE)
    e = event(1, at(2020, 7, 10, 8), value="pending", revisions=[revision])
    assert e.state_at(at(2020, 7, 11, 6))[1] == "pending"
    assert e.state_at(at(2020, 7, 11, 12))[1] == "1"
    assert e.settled_state()[1] == "1"


def test_backdate_moves_occurrence():
    true_time = at(2020, 7, 10, 8)
    revision = RevisionRecord(at(2020, 7, 12), "1", RevisionKind.BACKDATE, new_occurred_at=true_time)
    e = event(1, at(2020, 7, 11, 9), revisions=[revision])
    assert e.state_at(at(2020, 7, 11, 23))[0] == at(2020, 7, 11, 9)
    assert e.settled_state()[0] == true_time


def test_cancel_hides_event():
    e = event(1, at(2020, 7, 10, 8), revisions=[RevisionRecord(at(2020, 7, 11), None, RevisionKind.CANCEL)])
    assert e.state_at(at(2020, 7, 10, 20)) is not None
    assert e.settled_state() is None


def test_revision_ordering_is_validated():
    e = event(1, at(2020, 7, 10, 8), revisions=[
        RevisionRecord(at(2020, 7, 11), "1", RevisionKind.UPDATE),
        RevisionRecord(at(2020, 7, 11), "1", RevisionKind.UPDATE),
    ])
    with pytest.raises(DataError):
        e.validate()
    with pytest.raises(DataError):
        event(1, at(2020, 7, 10, 8), entered_at=at(2020, 7, 10, 7)).validate()


def test_encounter_validation():
    with pytest.raises(DataError):
        make_encounter(admit=at(2020, 7, 10), discharge=at(2020, 7, 9)).validate()
    with pytest.raises(DataError):
        make_encounter(outcome_time=at(2021, 1, 1)).validate()


def test_class_code_history():
    admit, discharge = at(2020, 7, 10, 10), at(2020, 7, 14, 10)
    truth = make_encounter(admit=admit, discharge=discharge,
                           history=[(admit, CLASS_INPATIENT), (discharge + 2 * 1440, CLASS_OUTPATIENT)])
    assert truth.is_inpatient_at(discharge)
    assert not truth.is_inpatient_at(discharge + 3 * 1440)
    assert truth.class_code_at(admit - 1) is None
    assert truth.n_calendar_days == 5


def test_meta_from_truth_drops_negative_outcome():
    meta = EncounterMeta.from_truth(make_encounter(outcome_time=at(2020, 7, 12, 9)))
    assert meta.outcome_time == at(2020, 7, 12, 9)
    assert meta.admit_month_year == "2020-07"
    assert EncounterMeta.from_dict(meta.to_dict()) == meta


def test_extract_restrict():
    rows = [DayRecord("A", date(2020, 7, 10), 1), DayRecord("B", date(2020, 7, 10), 1)]
    metas = {eid: EncounterMeta(eid, "p", at(2020, 7, 10), at(2020, 7, 13)) for eid in ("A", "B")}
    extract = RawExtract("retrospective", rows, metas)
    kept = extract.restrict(["B"])
    assert kept.encounter_ids() == ["B"]
    assert kept.keys() == {("B", date(2020, 7, 10))}
