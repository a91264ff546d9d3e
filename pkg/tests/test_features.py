from datetime import date

import numpy as np
import pytest

from ehr_model import DayRecord, EncounterMeta, RawExtract
from features.alignment import align_paired
from features.encoding import (
    EncodingReport, FeatureSpec, FeatureSpecSet, build_feature_matrix, encode, fit_feature_specs,
    fit_quintile_bins, prune_rare,
)
from features.inclusion import (
    EXCLUDE_EARLY_OUTCOME, EXCLUDE_RECENT_PRIOR, EXCLUDE_SHORT_STAY, apply_inclusion, exclusion_reason,
    summarize_cohort,
)
from features.matrix import canonical_csr
from features.taxonomy import FeatureDef, FeatureGroup, FeatureKind, FeatureTaxonomy, Persistence, Prefix
from utils.errors import ConfigError, DegenerateFeatureError, InclusionViolationError, SchemaError
from utils.timeline import date_of

from conftest import at, toy_matrix


def meta(encounter_id="E", admit=None, discharge=None, outcome=None, prior=None, demographics=None):
    return EncounterMeta(encounter_id, "P" + encounter_id,
                         at(2020, 7, 10, 10) if admit is None else admit,
                         at(2020, 7, 14, 10) if discharge is None else discharge,
                         outcome_time=outcome, prior_outcome_time=prior, demographics=demographics or {})


def raw_of(*metas):
    """One empty row per calendar day of each stay."""
    rows = []
    for m in metas:
        days = range(m.admit_date.toordinal(), date_of(m.discharge_at).toordinal() + 1)
        for k, ordinal in enumerate(days, start=1):
            rows.append(DayRecord(m.encounter_id, date.fromordinal(ordinal), k, {}))
    return RawExtract("retrospective", rows, {m.encounter_id: m for m in metas})


# ---- inclusion ---------------------------------------------------------

def test_two_calendar_days_is_short_stay():
    assert exclusion_reason(meta(discharge=at(2020, 7, 11, 23))) == EXCLUDE_SHORT_STAY
    assert exclusion_reason(meta(admit=at(2020, 7, 10, 23), discharge=at(2020, 7, 12, 1))) is None


@pytest.mark.parametrize("outcome_day,reason", [(1, EXCLUDE_EARLY_OUTCOME), (2, EXCLUDE_EARLY_OUTCOME), (3, None)])
def test_early_outcome_boundary(outcome_day, reason):
    outcome = at(2020, 7, 9 + outcome_day, 12)
    assert exclusion_reason(meta(outcome=outcome)) == reason


@pytest.mark.parametrize("days_before,reason", [
    (0, EXCLUDE_RECENT_PRIOR), (14, EXCLUDE_RECENT_PRIOR), (15, None), (-1, None),
])
def test_prior_outcome_window(days_before, reason):
    prior = at(2020, 7, 10, 1) - days_before * 1440
    assert exclusion_reason(meta(prior=prior)) == reason


def test_positive_rows_stop_before_outcome_day():
    raw = raw_of(meta("A", outcome=at(2020, 7, 12, 8)), meta("B"), meta("C", discharge=at(2020, 7, 11, 9)))
    result = apply_inclusion(raw)
    assert result.labels == {"A": 1, "B": 0}
    assert result.excluded == {"C": EXCLUDE_SHORT_STAY}
    assert [r.day_of_stay for r in result.extract.rows if r.encounter_id == "A"] == [1, 2]
    assert [r.day_of_stay for r in result.extract.rows if r.encounter_id == "B"] == [1, 2, 3, 4, 5]

    everything = apply_inclusion(raw, score_post_outcome_days=True)
    assert len([r for r in everything.extract.rows if r.encounter_id == "A"]) == 5


@pytest.mark.parametrize("outcome_hour", [0, 8, 23])
def test_no_row_on_or_after_outcome_day(outcome_hour):
    positive = meta("A", outcome=at(2020, 7, 13, outcome_hour))
    rows = apply_inclusion(raw_of(positive)).extract.rows
    assert [r.day_of_stay for r in rows] == [1, 2, 3]
    assert max(r.date for r in rows) < date(2020, 7, 13)


def test_cohort_summary():
    raw = raw_of(meta("A", outcome=at(2020, 7, 12, 8), demographics={"age": 70, "gender": "female"}),
                 meta("B", demographics={"age": 50, "gender": "male"}))
    result = apply_inclusion(raw)
    table = summarize_cohort(result.extract, result.labels).set_index("characteristic")["value"]
    assert table["n_encounters"] == "2"
    assert table["female_percent"] == "50.0"
    assert table["outcome_incidence_percent"] == "50.0"
    assert table["age_median_iqr"] == "60.0 (55.0-65.0)"


# ---- encoding ----------------------------------------------------------

def tiny_taxonomy():
    taxonomy = FeatureTaxonomy()
    taxonomy.add_group(FeatureGroup("Idx", Prefix.IDX))
    taxonomy.add_group(FeatureGroup("Idx: Labs", Prefix.IDX, "Idx"))
    taxonomy.add_group(FeatureGroup("Idx: Units", Prefix.IDX, "Idx"))
    taxonomy.features = [
        FeatureDef(0, "lab", "Idx: Labs", FeatureKind.NUMERIC, Persistence.DAILY, 0.5),
        FeatureDef(1, "unit", "Idx: Units", FeatureKind.CATEGORICAL, Persistence.DAILY, 0.5, ("b", "a")),
        FeatureDef(2, "rare_lab", "Idx: Labs", FeatureKind.NUMERIC, Persistence.DAILY, 0.5),
    ]
    return taxonomy


def training_extract():
    rows = [DayRecord("T", date(2017, 1, d), d, {0: float(d), 1: "b" if d % 2 else "a"}) for d in range(1, 11)]
    rows[0].values[2] = 1.0
    rows[1].values[0] = "pending"
    return RawExtract("retrospective", rows, {"T": meta("T", at(2017, 1, 1), at(2017, 1, 10))})


def test_quintile_bounds_use_linear_interpolation():
    assert fit_quintile_bins(range(1, 11)) == pytest.approx((2.8, 4.6, 6.4, 8.2))
    with pytest.raises(DegenerateFeatureError):
        fit_quintile_bins([1.0, 2.0, None, 3.0, 4.0])


def test_numeric_offsets():
    spec = FeatureSpec(0, "lab", "g", FeatureKind.NUMERIC, quintile_bounds=(2.8, 4.6, 6.4, 8.2))
    assert spec.column_ids() == ["lab#q1", "lab#q2", "lab#q3", "lab#q4", "lab#q5", "lab#missing"]
    assert spec.offset_of(1.0) == 0
    assert spec.offset_of(2.8) == 0
    assert spec.offset_of(2.81) == 1
    assert spec.offset_of(100) == 4
    assert spec.offset_of(None) == 5
    assert spec.offset_of("pending") == 5
    no_missing = FeatureSpec(0, "lab", "g", FeatureKind.NUMERIC, quintile_bounds=(1, 2, 3, 4),
                             include_missing_bin=False)
    assert no_missing.width == 5
    assert no_missing.offset_of(None) is None


def test_fit_specs_on_training_values():
    specs = fit_feature_specs([training_extract()], tiny_taxonomy())
    lab, unit, rare = specs.specs
    assert unit.categories == ("a", "b")
    assert not lab.demoted and len(lab.quintile_bounds) == 4
    assert rare.demoted
    assert rare.column_ids() == ["rare_lab#missing"]
    assert specs.columns == lab.column_ids() + ["unit=a", "unit=b", "rare_lab#missing"]


def test_unseen_category_encodes_to_zero_and_is_counted():
    specs = fit_feature_specs([training_extract()], tiny_taxonomy())
    report = EncodingReport()
    row = encode(DayRecord("X", date(2020, 7, 10), 1, {1: "c"}), specs, report)
    assert row.tolist() == [0, 0, 0, 0, 0, 1, 0, 0, 1]
    assert report.unseen == {"unit": 1}
    pending = encode(DayRecord("X", date(2020, 7, 10), 1, {1: "pending"}), specs, report)
    assert pending[6:8].tolist() == [0, 0]
    assert report.n_unseen == 1


def test_spec_set_round_trip_and_retained():
    specs = fit_feature_specs([training_extract()], tiny_taxonomy())
    frozen = specs.with_retained(["unit=b", "lab#q1"])
    assert frozen.columns == ["lab#q1", "unit=b"]
    assert FeatureSpecSet.from_dict(frozen.to_dict()).columns == frozen.columns
    with pytest.raises(ConfigError):
        specs.with_retained(["nope"])
    data = specs.to_dict()
    data["schema_version"] = "9"
    with pytest.raises(ConfigError):
        FeatureSpecSet.from_dict(data)


def test_feature_matrix_respects_retained_columns():
    raw = training_extract()
    specs = fit_feature_specs([raw], tiny_taxonomy()).with_retained(["unit=a", "unit=b"])
    matrix, report = build_feature_matrix(raw, {"T": 0}, specs)
    assert matrix.columns == ["unit=a", "unit=b"]
    assert matrix.column_groups == ["Idx: Units", "Idx: Units"]
    assert matrix.n_rows == 10 and report.n_rows == 10
    assert np.all(matrix.X.sum(axis=1) == 1)
    with pytest.raises(InclusionViolationError):
        build_feature_matrix(raw, {}, specs)


def test_prune_rare_counts_encounters(two_encounter_matrix):
    assert prune_rare(two_encounter_matrix, 2) == ["c0"]
    assert prune_rare(two_encounter_matrix, 1) == ["c0", "c1", "c2"]
    assert prune_rare(two_encounter_matrix, 0) == ["c0", "c1", "c2"]
    with pytest.raises(ConfigError):
        prune_rare(two_encounter_matrix, -1)


# ---- matrix and alignment ----------------------------------------------

def test_canonical_csr_is_binary():
    X = canonical_csr(np.array([[0, 2, 0], [0, 0, 0]]))
    assert X.data.tolist() == [1.0]
    assert X.has_sorted_indices


def test_matrix_helpers(two_encounter_matrix):
    m = two_encounter_matrix
    assert m.n_empty_rows == 0
    assert m.encounter_labels().to_dict() == {"A": 1, "B": 0}
    assert m.restrict_window(date(2020, 7, 11), date(2020, 7, 11)).n_rows == 2
    assert m.select_columns(["c2", "c0"]).X.toarray()[3].tolist() == [1.0, 0.0]
    with pytest.raises(SchemaError):
        m.select_columns(["c9"])
    empty = toy_matrix([[0, 0], [1, 0]], ["A", "A"], [date(2020, 7, 10), date(2020, 7, 11)], [0, 0])
    assert empty.n_empty_rows == 1


def test_align_paired_keys(two_encounter_matrix):
    pro = two_encounter_matrix.take_rows([0, 2, 3, 5])
    ret = two_encounter_matrix.take_rows([5, 4, 0, 1])
    paired = align_paired(pro, ret)
    assert paired.keys == [("A", date(2020, 7, 10)), ("B", date(2020, 7, 12))]
    assert paired.pro_rows.tolist() == [0, 3]
    assert paired.ret_rows.tolist() == [2, 0]
    assert paired.unpaired_pro == [("A", date(2020, 7, 12)), ("B", date(2020, 7, 10))]
    assert paired.unpaired_ret_dates() == [date(2020, 7, 11)]
    with pytest.raises(SchemaError):
        align_paired(pro, ret.select_columns(["c0"]))
