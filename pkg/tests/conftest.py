"""
Shared fixtures: a small taxonomy, small simulator configs, hand-built
encounters and toy feature matrices.
"""
from datetime import date, datetime

import numpy as np
import pandas as pd
import pytest
from scipy import sparse

from ehr_model import EncounterTruth, EventRecord
from features.matrix import FeatureMatrix
from features.taxonomy import default_taxonomy
from simulation_engine import SimConfig
from utils.constants import CLASS_INPATIENT
from utils.timeline import to_minutes

SMALL_SIZES = {
    "Demographics: County & State": 4,
    "Hx: Diagnoses": 4,
    "Hx: Medications (Medication)": 3,
    "Hx: Medications (Ingredient)": 2,
    "Hx: Medications (Class)": 1,
    "Idx: In-Hospital Locations": 4,
    "Idx: Vital Sign Measurements": 2,
    "Idx: Laboratory Results": 3,
    "Idx: Medications (Medication)": 3,
    "Idx: Medications (Ingredient)": 2,
    "Idx: Medications (Class)": 1,
}


def at(year, month, day, hour=0, minute=0) -> int:
    """Epoch minutes of a local wall-clock time."""
    return to_minutes(datetime(year, month, day, hour, minute))


def shrink(config: SimConfig, n_encounters: int = 60) -> SimConfig:
    config.taxonomy_sizes = dict(SMALL_SIZES)
    config.n_encounters = n_encounters
    config.validate()
    return config


@pytest.fixture
def small_taxonomy():
    return default_taxonomy(SMALL_SIZES)


@pytest.fixture
def small_config():
    return shrink(SimConfig.desk(seed=11))


@pytest.fixture
def zero_noise_config():
    return shrink(SimConfig.zero_noise(seed=11))


@pytest.fixture
def planted_config():
    return shrink(SimConfig.planted_medication_noise(seed=11, revision_rate=0.3), n_encounters=80)


def make_encounter(encounter_id="E0", admit=None, discharge=None, events=(), history=None, census=None,
                   outcome_time=None, prior_outcome_time=None) -> EncounterTruth:
    admit = at(2020, 7, 10, 10) if admit is None else admit
    discharge = at(2020, 7, 13, 15) if discharge is None else discharge
    return EncounterTruth(
        encounter_id=encounter_id,
        patient_id="P" + encounter_id,
        admit_at=admit,
        discharge_at=discharge,
        true_class_code_history=history if history is not None else [(admit, CLASS_INPATIENT)],
        census_intervals=census if census is not None else [(admit, discharge)],
        outcome_positive=outcome_time is not None,
        outcome_time=outcome_time,
        events=list(events),
        prior_outcome_time=prior_outcome_time,
    )


def event(feature_id, occurred_at, entered_at=None, value="1", revisions=(), carry_forward=False,
          encounter_id="E0") -> EventRecord:
    return EventRecord(encounter_id, feature_id, occurred_at, occurred_at if entered_at is None else entered_at,
                       value, list(revisions), carry_forward)


def toy_matrix(dense, encounter_ids, dates, labels, columns=None, groups=None, month_years=None) -> FeatureMatrix:
    """FeatureMatrix from a dense 0/1 array and per-row metadata."""
    dense = np.asarray(dense, dtype=float)
    n_rows, n_cols = dense.shape
    columns = columns or [f"c{j}" for j in range(n_cols)]
    day_of_stay = pd.Series(range(n_rows)).groupby(pd.Series(encounter_ids)).cumcount().to_numpy() + 1
    rows = pd.DataFrame({
        "encounter_id": list(encounter_ids),
        "date": list(dates),
        "day_of_stay": day_of_stay,
        "admit_month_year": month_years or [f"{d.year:04d}-{d.month:02d}" for d in dates],
        "label": list(labels),
    })
    return FeatureMatrix(sparse.csr_matrix(dense), rows, columns, groups or ["g"] * n_cols)


@pytest.fixture
def two_encounter_matrix():
    dates = [date(2020, 7, 10), date(2020, 7, 11), date(2020, 7, 12),
             date(2020, 7, 10), date(2020, 7, 11), date(2020, 7, 12)]
    dense = [[1, 0, 0], [0, 1, 0], [1, 1, 0], [0, 0, 1], [0, 0, 1], [1, 0, 0]]
    return toy_matrix(dense, ["A", "A", "A", "B", "B", "B"], dates, [1, 1, 1, 0, 0, 0])
