from datetime import date

import numpy as np
import pandas as pd
import pytest

from analysis.drift import sample_one_day, temporal_drift_test
from analysis.gap import gap_bootstrap, performance_gap
from analysis.metrics import ScoreSet, auroc
from analysis.sources import (
    ALL_GROUPS, feature_discrepancy, feature_swap, feature_swap_table, first_half_window, outage_days_per_encounter,
    score_concordance, swap_columns,
)
from ehr_model import EncounterMeta
from risk_model import RiskModel, score_matrix
from utils.errors import DataError, SchemaError
from utils.statistics import sigmoid

from conftest import at, toy_matrix

MED = "Idx: Medications (Medication)"
ING = "Idx: Medications (Ingredient)"
LAB = "Idx: Laboratory Results"


# ---- decomposition ------------------------------------------------------

def test_auroc_gap_decomposition():
    gap, gap_time, gap_infra = performance_gap(0.778, 0.783, 0.767)
    assert gap == pytest.approx(0.011)
    assert gap_time == pytest.approx(-0.005)
    assert gap_infra == pytest.approx(0.016)


def test_brier_gap_is_negated():
    gap, gap_time, gap_infra = performance_gap(0.163, 0.186, 0.189, negate=True)
    assert gap == pytest.approx(0.026)
    assert gap_time == pytest.approx(0.023)
    assert gap_infra == pytest.approx(0.003)


def scores_of(seed, n=150, shift=1.0):
    rng = np.random.default_rng(seed)
    labels = (rng.random(n) < 0.3).astype(int)
    return ScoreSet([f"E{i}" for i in range(n)], ["2020-07"] * n, sigmoid(rng.normal(size=n) + shift * labels),
                    labels)


def test_gap_bootstrap_identity_and_orientation():
    ret, ret_prime, pro = scores_of(0), scores_of(1, shift=0.8), scores_of(2, shift=0.5)
    report = gap_bootstrap(ret, ret_prime, pro, "auroc", n_replicates=50, seed=4)
    assert abs(report.identity_residual()) <= 1e-12
    assert report.p_ret.point == auroc(ret)
    assert report.gap.point == pytest.approx(auroc(ret) - auroc(pro))
    assert not report.negate

    brier_report = gap_bootstrap(ret, ret_prime, pro, "brier", n_replicates=20, seed=4)
    assert brier_report.negate
    frame = brier_report.to_frame()
    assert frame["quantity"].tolist() == ["p_ret", "p_ret_prime", "p_pro", "gap", "gap_time", "gap_infra"]
    assert frame["negated"].all()


def test_gap_bootstrap_is_deterministic():
    ret, ret_prime, pro = scores_of(0), scores_of(1), scores_of(2)
    a = gap_bootstrap(ret, ret_prime, pro, n_replicates=30, seed=9).to_frame()
    b = gap_bootstrap(ret, ret_prime, pro, n_replicates=30, seed=9).to_frame()
    pd.testing.assert_frame_equal(a, b)


def test_identical_sets_have_zero_infrastructure_gap():
    ret = scores_of(0)
    report = gap_bootstrap(ret, ret, ret, n_replicates=20, seed=1)
    assert report.gap_infra.point == 0.0
    assert report.gap.point == 0.0


# ---- concordance --------------------------------------------------------

def test_score_concordance_on_shared_encounters():
    ret = pd.Series({"A": 0.1, "B": 0.5, "C": 0.9})
    pro = pd.Series({"A": 0.2, "B": 0.6, "C": 1.0, "D": 0.3})
    report = score_concordance(ret, pro, threshold=0.5, outage_counts={"B": 2})
    assert report.pairs["encounter_id"].tolist() == ["A", "B", "C"]
    assert report.r == pytest.approx(1.0)
    assert report.slope == pytest.approx(1.0)
    assert report.intercept == pytest.approx(0.1)
    assert report.discordant.empty
    assert report.pairs["outage_days"].tolist() == [0, 2, 0]
    assert len(score_concordance(ret, pro, threshold=0.05).discordant) == 3
    assert report.summary().loc[0, "n_pairs"] == 3


def test_concordance_of_constant_scores_has_no_correlation():
    ret = pd.Series({"A": 0.4, "B": 0.4})
    report = score_concordance(ret, pd.Series({"A": 0.1, "B": 0.9}))
    assert report.r is None and report.slope is None


def test_outage_days_per_encounter():
    metas = {"A": EncounterMeta("A", "p", at(2020, 7, 10, 9), at(2020, 7, 14, 9))}
    assert outage_days_per_encounter(metas, [date(2020, 7, 12), date(2020, 7, 20), date(2020, 7, 14)]) == {"A": 2}


# ---- discrepancy and swap -----------------------------------------------

RET_ROWS = [
    [1, 0, 0], [1, 1, 0],
    [1, 0, 1], [0, 0, 0],
    [0, 1, 0], [1, 0, 0],
    [0, 0, 1], [0, 0, 0],
    [0, 1, 0], [0, 0, 0],
    [0, 0, 0], [0, 0, 1],
]
PRO_ROWS = [
    [0, 0, 0], [0, 1, 0],
    [1, 0, 1], [0, 0, 0],
    [0, 1, 0], [1, 0, 0],
    [1, 0, 1], [0, 0, 0],
    [0, 1, 0], [0, 0, 0],
    [0, 0, 0], [0, 0, 1],
]


def paired_pair():
    ids = [e for e in ("E0", "E1", "E2", "E3", "E4", "E5") for _ in range(2)]
    dates = [date(2020, 7, 10), date(2020, 7, 11)] * 6
    labels = [1] * 6 + [0] * 6
    kwargs = dict(columns=["m1", "m2", "l1"], groups=[MED, ING, LAB])
    return (toy_matrix(PRO_ROWS, ids, dates, labels, **kwargs), toy_matrix(RET_ROWS, ids, dates, labels, **kwargs))


def med_model():
    return RiskModel(["m1", "m2", "l1"], [2020], np.array([2.0, 1.0, 0.5]), {2020: np.zeros(3)}, -1.0, 0.1)


def test_feature_discrepancy_rates(small_taxonomy):
    pro, ret = paired_pair()
    report = feature_discrepancy(pro, ret, taxonomy=small_taxonomy)
    assert report.n_rows == 12
    assert report.rates.set_index("column")["rate"].to_dict() == {"m1": 0.25, "m2": 0.0, "l1": 0.0}
    groups = report.groups.set_index("group")
    assert groups.loc["Idx: Medications", "n_columns"] == 2
    assert groups.loc["Idx: Medications", "mean_rate"] == pytest.approx(0.125)
    assert groups.loc["Idx: Medications", "level"] == "rollup"
    assert groups.loc[LAB, "n_any_discrepancy"] == 0
    assert report.histogram["count"].sum() == 3
    assert report.summary()["n_any_discrepancy"] == 1


def test_discrepancy_uses_shared_rows_only():
    pro, ret = paired_pair()
    report = feature_discrepancy(pro.take_rows(range(10)), ret.take_rows(range(2, 12)))
    assert report.n_rows == 8
    assert report.rates.set_index("column").loc["m1", "n_mismatch"] == 1
    with pytest.raises(SchemaError):
        feature_discrepancy(pro, ret.select_columns(["m1", "m2"]))


def test_swap_columns_is_canonical():
    pro, ret = paired_pair()
    swapped = swap_columns(pro.X, ret.X, np.arange(3))
    assert (swapped != ret.X).nnz == 0
    assert swapped.indices.tolist() == ret.X.indices.tolist()
    assert swapped.indptr.tolist() == ret.X.indptr.tolist()


def test_full_swap_reproduces_retrospective_auroc(small_taxonomy):
    pro, ret = paired_pair()
    model = med_model()
    result = feature_swap(pro, ret, ALL_GROUPS, model, small_taxonomy)
    assert result.auroc == auroc(ScoreSet.from_daily(ret.rows, score_matrix(model, ret)))
    assert result.baseline == auroc(ScoreSet.from_daily(pro.rows, score_matrix(model, pro)))
    assert result.n_columns == 3 and result.level == "all"


def test_swap_table_traces_gap_to_medications(small_taxonomy):
    pro, ret = paired_pair()
    table = feature_swap_table(pro, ret, med_model(), small_taxonomy).set_index("group")
    expected = len(small_taxonomy.leaf_groups()) + len(small_taxonomy.rollup_groups()) + 1
    assert len(table) == expected
    assert table.loc["Idx: Medications", "difference"] == table.loc[ALL_GROUPS, "difference"]
    assert table.loc[MED, "difference"] == table.loc[ALL_GROUPS, "difference"]
    assert table.loc[LAB, "difference"] == 0.0
    assert table.loc[ING, "difference"] == 0.0
    assert table.iloc[-1].name == ALL_GROUPS
    assert table.loc[MED, "formatted"].startswith(MED + ", ")


def test_swap_of_identical_matrices_changes_nothing(small_taxonomy):
    _, ret = paired_pair()
    table = feature_swap_table(ret, ret, med_model(), small_taxonomy)
    assert (table["difference"] == 0.0).all()


def test_first_half_window():
    _, ret = paired_pair()
    assert first_half_window(ret) == (date(2020, 7, 10), date(2020, 7, 10))


# ---- drift ---------------------------------------------------------------

def one_row_per_encounter(dense, prefix):
    n = len(dense)
    return toy_matrix(dense, [f"{prefix}{i}" for i in range(n)], [date(2019, 8, 1)] * n, [0] * n,
                      columns=["a", "b", "never"], groups=[MED, LAB, LAB])


def column_with(n_active, n=200):
    column = np.zeros(n)
    column[:n_active] = 1.0
    return column


def drift_pair(seed=0, n=200):
    rng = np.random.default_rng(seed)
    first = np.c_[column_with(20), column_with(60), np.zeros(n)]
    second = np.c_[column_with(120), column_with(62), np.zeros(n)]
    return (one_row_per_encounter(first[rng.permutation(n)], "F"),
            one_row_per_encounter(second[rng.permutation(n)], "S"))


def test_drift_matches_statsmodels():
    proportion = pytest.importorskip("statsmodels.stats.proportion")
    first, second = drift_pair()
    report = temporal_drift_test(first, second, alpha=0.05)
    table = report.table.set_index("column")
    for column in ("a", "b"):
        counts = [int(first.X[:, first.column_index()[column]].sum()),
                  int(second.X[:, second.column_index()[column]].sum())]
        z, p = proportion.proportions_ztest(counts, [200, 200])
        assert table.loc[column, "z"] == pytest.approx(z)
        assert table.loc[column, "p_value"] == pytest.approx(p)


def test_drift_flags_planted_shift_with_bonferroni():
    first, second = drift_pair()
    report = temporal_drift_test(first, second, alpha=0.05)
    assert report.n_tested == 2
    assert report.skipped == ["never"]
    assert report.threshold == pytest.approx(0.025)
    assert report.significant["column"].tolist() == ["a"]
    groups = report.groups.set_index("group")
    assert groups.loc[MED, "n_significant"] == 1
    assert groups.loc[LAB, "n_tested"] == 1


def test_drift_is_antisymmetric():
    first, second = drift_pair(seed=3)
    forward = temporal_drift_test(first, second).table.set_index("column")
    backward = temporal_drift_test(second, first).table.set_index("column")
    assert forward.loc["a", "z"] == pytest.approx(-backward.loc["a", "z"])
    assert forward.loc["b", "p_value"] == pytest.approx(backward.loc["b", "p_value"])


def test_drift_samples_one_day_per_encounter(two_encounter_matrix):
    picks = sample_one_day(two_encounter_matrix, seed=2)
    assert len(picks) == 2
    assert picks[0] in (0, 1, 2) and picks[1] in (3, 4, 5)
    assert picks.tolist() == sample_one_day(two_encounter_matrix, seed=2).tolist()


def test_drift_input_errors(two_encounter_matrix):
    with pytest.raises(SchemaError):
        temporal_drift_test(two_encounter_matrix, two_encounter_matrix.select_columns(["c0"]))
    with pytest.raises(DataError):
        temporal_drift_test(two_encounter_matrix.take_rows([]), two_encounter_matrix)


def bernoulli_period(rates, seed, prefix, n=2000):
    rng = np.random.default_rng(seed)
    dense = (rng.random((n, len(rates))) < rates).astype(float)
    columns = [f"f{j}" for j in range(len(rates))]
    return toy_matrix(dense, [f"{prefix}{i}" for i in range(n)], [date(2019, 8, 1)] * n, [0] * n,
                      columns=columns, groups=[LAB] * len(rates))


def drift_rates(n_features=500):
    return np.random.default_rng(1234).uniform(0.05, 0.5, size=n_features)


@pytest.mark.slow
def test_drift_false_positives_under_null():
    rates = drift_rates()
    counts = []
    for run in range(100):
        first = bernoulli_period(rates, 2 * run, "F")
        second = bernoulli_period(rates, 2 * run + 1, "S")
        counts.append(len(temporal_drift_test(first, second, alpha=0.05, seed=run).significant))
    assert np.mean(counts) <= 0.1


@pytest.mark.slow
def test_drift_detects_planted_prevalence_shift():
    rates = drift_rates()
    rates[0] = 0.10
    shifted = rates.copy()
    shifted[0] = 0.20
    detected = 0
    for run in range(50):
        first = bernoulli_period(rates, 2 * run, "F")
        second = bernoulli_period(shifted, 2 * run + 1, "S")
        detected += "f0" in set(temporal_drift_test(first, second, alpha=0.05, seed=run).significant["column"])
    assert detected >= 48
