import numpy as np
import pandas as pd
import pytest

from analysis.bootstrap import bootstrap_ci
from analysis.metrics import ScoreSet, auroc, brier, confusion_at, percentile_threshold, roc_points
from analysis.monthly import compare_monthly, month_keys, monthly_difference_test, monthly_metric
from analysis.registry import MetricRegistry
from utils.errors import ConfigError, DataError, UndefinedMetricError
from utils.statistics import sigmoid


def score_set(scores, labels, months=None):
    n = len(scores)
    return ScoreSet([f"E{i}" for i in range(n)], months or ["2020-07"] * n, scores, labels)


def brute_force_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_auroc_matches_pairwise_count_with_ties():
    rng = np.random.default_rng(0)
    scores = np.round(rng.random(60), 1)
    labels = (rng.random(60) < 0.4).astype(int)
    assert auroc(scores, labels) == pytest.approx(brute_force_auroc(scores, labels), abs=1e-12)


def test_auroc_matches_sklearn():
    metrics = pytest.importorskip("sklearn.metrics")
    rng = np.random.default_rng(1)
    labels = (rng.random(300) < 0.2).astype(int)
    scores = sigmoid(rng.normal(size=300) + labels)
    assert auroc(score_set(scores, labels)) == pytest.approx(metrics.roc_auc_score(labels, scores), abs=1e-12)


def test_auroc_needs_both_classes():
    with pytest.raises(UndefinedMetricError):
        auroc([0.1, 0.2], [1, 1])
    assert auroc([0.3, 0.3], [0, 1]) == 0.5


def test_brier():
    assert brier([0.2, 0.9], [0, 1]) == pytest.approx(0.025)
    with pytest.raises(UndefinedMetricError):
        brier([], [])


def test_percentile_threshold():
    assert percentile_threshold(np.arange(1, 11), 20) == pytest.approx(2.8)
    assert percentile_threshold(np.arange(1, 11), 80) == pytest.approx(8.2)
    with pytest.raises(UndefinedMetricError):
        percentile_threshold([], 95)


def test_confusion_counts_score_at_threshold_as_positive():
    c = confusion_at([0.1, 0.5, 0.5, 0.9], 0.5, [0, 0, 1, 1])
    assert (c.tp, c.fp, c.tn, c.fn) == (2, 1, 1, 0)
    assert c.sensitivity == 1.0
    assert c.specificity == 0.5
    assert c.ppv == pytest.approx(2 / 3)
    nothing = confusion_at([0.1, 0.2], 0.9, [0, 1])
    assert nothing.ppv is None
    with pytest.raises(ValueError):
        confusion_at([0.1], float("nan"), [0])


def test_roc_points_area_equals_auroc():
    scores, labels = np.array([0.9, 0.8, 0.8, 0.1]), np.array([1, 0, 1, 0])
    points = roc_points(scores, labels)
    assert points["tpr"].tolist() == [0.0, 0.5, 1.0, 1.0]
    assert points["fpr"].tolist() == [0.0, 0.0, 0.5, 1.0]
    fpr, tpr = points["fpr"].to_numpy(), points["tpr"].to_numpy()
    area = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    assert area == pytest.approx(auroc(scores, labels))
    assert area == pytest.approx(0.875)


def test_score_set_validation_and_collapse():
    with pytest.raises(DataError):
        score_set([1.2], [0])
    with pytest.raises(DataError):
        score_set([0.2], [2])
    rows = pd.DataFrame({"encounter_id": ["A", "A", "B"], "admit_month_year": ["2020-07"] * 3, "label": [1, 1, 0]})
    collapsed = ScoreSet.from_daily(rows, [0.2, 0.7, 0.4])
    assert collapsed.encounter_ids.tolist() == ["A", "B"]
    assert collapsed.scores.tolist() == [0.7, 0.4]
    assert collapsed.n_pos == 1


def test_metric_registry():
    assert MetricRegistry.get_all_names() == ["auroc", "brier", "ppv", "sensitivity", "specificity"]
    assert MetricRegistry.oriented("brier", 0.2) == -0.2
    with pytest.raises(ConfigError):
        MetricRegistry.create("sensitivity")
    with pytest.raises(ConfigError):
        MetricRegistry.get("f1")
    sensitivity = MetricRegistry.create("sensitivity", threshold=0.5)
    assert sensitivity(score_set([0.6, 0.4, 0.1], [1, 1, 0])) == 0.5


# ---- bootstrap ----------------------------------------------------------

def noisy_scores(seed=0, n=200):
    rng = np.random.default_rng(seed)
    labels = (rng.random(n) < 0.3).astype(int)
    return score_set(sigmoid(rng.normal(size=n) + labels), labels)


def test_bootstrap_is_deterministic():
    scores = noisy_scores()
    first = bootstrap_ci(scores, "auroc", n_replicates=100, seed=7)
    second = bootstrap_ci(scores, "auroc", n_replicates=100, seed=7)
    assert (first.lower, first.upper) == (second.lower, second.upper)
    assert first.lower <= first.point <= first.upper
    other = bootstrap_ci(scores, "auroc", n_replicates=100, seed=7, keys=("d_pro",))
    assert (other.lower, other.upper) != (first.lower, first.upper)


def test_bootstrap_without_replicates_collapses_to_point():
    ci = bootstrap_ci(noisy_scores(), "brier", n_replicates=0)
    assert ci.lower == ci.upper == ci.point


def test_bootstrap_redraws_single_class_replicates():
    scores = score_set([0.9, 0.1, 0.2, 0.3, 0.4, 0.5], [1, 0, 0, 0, 0, 0])
    ci = bootstrap_ci(scores, "auroc", n_replicates=50, seed=1)
    assert ci.n_redraws > 0
    assert ci.point == 1.0
    assert (ci.n, ci.n_pos) == (6, 1)


def test_bootstrap_undefined_on_full_set():
    with pytest.raises(UndefinedMetricError):
        bootstrap_ci(score_set([0.2, 0.3], [0, 0]), "auroc", n_replicates=10)


@pytest.mark.slow
def test_bootstrap_interval_coverage():
    # positives ~ N(1, 1), negatives ~ N(0, 1): AUROC = Phi(1 / sqrt(2))
    true_auroc = 0.760250
    covered = 0
    for trial in range(100):
        rng = np.random.default_rng(1000 + trial)
        labels = (rng.random(200) < 0.5).astype(int)
        scores = score_set(sigmoid(rng.normal(size=200) + labels), labels)
        ci = bootstrap_ci(scores, "auroc", n_replicates=200, seed=trial)
        covered += ci.lower <= true_auroc <= ci.upper
    assert 85 <= covered <= 100


# ---- monthly ------------------------------------------------------------

def two_month_scores(seed=0):
    rng = np.random.default_rng(seed)
    labels = np.r_[(rng.random(40) < 0.4).astype(int), np.zeros(10, dtype=int)]
    months = ["2020-07"] * 40 + ["2020-08"] * 10
    return score_set(sigmoid(rng.normal(size=50) + labels), labels, months)


def test_monthly_metric_keeps_undefined_months():
    table = monthly_metric(two_month_scores(), "auroc", n_replicates=20, seed=3)
    assert table["month_year"].tolist() == ["2020-07", "2020-08"]
    assert table["defined"].tolist() == [True, False]
    assert table.loc[1, "n"] == 10 and table.loc[1, "n_pos"] == 0
    assert table.loc[0, "month"] == "07"


def test_monthly_difference_of_identical_periods():
    scores = two_month_scores()
    table = monthly_difference_test(scores, scores, "auroc", n_replicates=200, seed=3).set_index("month")
    assert table.loc["07", "diff"] == 0.0
    assert table.loc["07", "ci_overlap"]
    assert not table.loc["07", "bootstrap_diff"]
    assert pd.isna(table.loc["08", "diff"])


def test_compare_monthly_outer_join():
    a = monthly_metric(two_month_scores(), "brier", n_replicates=10)
    b = monthly_metric(score_set([0.2, 0.7], [0, 1], ["2021-09", "2021-09"]), "brier", n_replicates=10)
    joined = compare_monthly(a, b)
    assert joined["month"].tolist() == ["07", "08", "09"]
    assert joined["point_b"].isna().tolist() == [True, True, False]


def test_repeated_calendar_month_keeps_its_own_row():
    scores = score_set([0.1, 0.9, 0.2, 0.8], [0, 1, 0, 1], ["2020-07", "2020-07", "2021-07", "2021-07"])
    table = monthly_metric(scores, "brier", n_replicates=10)
    assert table["cycle"].tolist() == [0, 1]
    assert table["month"].tolist() == ["07", "07"]

    joined = compare_monthly(table, table)
    assert len(joined) == 2
    assert joined["month_year_a"].tolist() == joined["month_year_b"].tolist() == ["2020-07", "2021-07"]

    test = monthly_difference_test(scores, scores, "brier", n_replicates=20, seed=1)
    assert test["cycle"].tolist() == [0, 1]
    assert test["diff"].tolist() == [0.0, 0.0]


def test_month_keys_count_cycles_from_first_month():
    keys = month_keys(["2020-03", "2021-02", "2021-03", "2022-01"])
    assert keys == {(0, "03"): "2020-03", (0, "02"): "2021-02", (1, "03"): "2021-03", (1, "01"): "2022-01"}
