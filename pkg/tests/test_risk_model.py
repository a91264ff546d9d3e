from datetime import date, timedelta

import numpy as np
import pytest
from scipy import sparse

import risk_model
from analysis.metrics import auroc
from risk_model import (
    RiskModel, TrainConfig, cross_validate, encounter_max_score, expand_matrix, fit_logistic, loss_and_grad,
    max_scores_by_encounter, multitask_expand, predict_day, score_matrix, subsample_days, task_of, train,
)
from run_config import RunConfig
from utils.errors import (
    ConfigError, DegenerateLabelError, FoldError, InclusionViolationError, SchemaError, TaskMappingError,
)
from utils.statistics import sigmoid

from conftest import toy_matrix


def year_matrix(seed=0, years=(2013, 2014), per_year=30, days=3, width=4, signal=0.85, zeros=False):
    """Encounters of alternating label; column 0 agrees with the label with probability `signal`."""
    rng = np.random.default_rng(seed)
    dense, ids, dates, labels = [], [], [], []
    for year in years:
        for i in range(per_year):
            label = i % 2
            for k in range(days):
                row = (rng.random(width) < 0.3).astype(float)
                row[0] = label if rng.random() < signal else 1 - label
                dense.append(np.zeros(width) if zeros else row)
                ids.append(f"{year}-{i}")
                dates.append(date(year, 3, 1) + timedelta(days=k))
                labels.append(label)
    return toy_matrix(dense, ids, dates, labels)


def test_task_of():
    tasks = [2013, 2014, 2015]
    assert task_of(2014, tasks) == 2014
    assert task_of(2020, tasks) == 2015
    assert task_of(2010, tasks) == 2013
    with pytest.raises(TaskMappingError):
        task_of(2014, [])


def test_expand_matrix_matches_row_expansion():
    X = sparse.csr_matrix(np.array([[1, 0, 1], [0, 1, 0], [1, 1, 0], [0, 0, 1]], dtype=float))
    tasks = np.array([0, 1, 1, 0])
    expanded = expand_matrix(X, tasks, 2).toarray()
    assert expanded.shape == (4, 9)
    for i, t in enumerate(tasks):
        assert expanded[i].tolist() == multitask_expand(X[i], t, 2).tolist()
    assert multitask_expand(np.array([1.0, 2.0]), 1, 2).tolist() == [1.0, 2.0, 0.0, 0.0, 1.0, 2.0]
    with pytest.raises(TaskMappingError):
        multitask_expand(np.array([1.0]), 2, 2)
    with pytest.raises(TaskMappingError):
        expand_matrix(X, np.array([0, 0, 0, 3]), 2)


def test_subsample_days(two_encounter_matrix):
    rows = subsample_days(two_encounter_matrix, 2, seed=5)
    assert len(rows) == 4
    assert rows.tolist() == sorted(rows.tolist())
    ids = two_encounter_matrix.rows["encounter_id"].to_numpy()[rows]
    assert sorted(ids) == ["A", "A", "B", "B"]
    assert rows.tolist() == subsample_days(two_encounter_matrix, 2, seed=5).tolist()
    assert subsample_days(two_encounter_matrix, 3, seed=5).tolist() == list(range(6))
    with pytest.raises(InclusionViolationError):
        subsample_days(two_encounter_matrix, 4, seed=5)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(25, 5))
    y = (rng.random(25) < 0.4).astype(float)
    params = rng.normal(size=6)
    _, grad = loss_and_grad(params, X, y, 0.3)
    eps = 1e-6
    numeric = np.array([
        (loss_and_grad(params + eps * e, X, y, 0.3)[0] - loss_and_grad(params - eps * e, X, y, 0.3)[0]) / (2 * eps)
        for e in np.eye(6)
    ])
    assert grad == pytest.approx(numeric, rel=1e-5, abs=1e-8)


def test_intercept_is_not_penalized():
    X = np.zeros((4, 2))
    y = np.array([1.0, 1.0, 1.0, 0.0])
    loss_small, _ = loss_and_grad(np.array([0.0, 0.0, 3.0]), X, y, 0.0)
    loss_big, _ = loss_and_grad(np.array([0.0, 0.0, 3.0]), X, y, 100.0)
    assert loss_small == loss_big


def test_plain_fit_matches_sklearn():
    linear_model = pytest.importorskip("sklearn.linear_model")
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 5))
    y = (rng.random(200) < sigmoid(X @ np.array([1.0, -2.0, 0.5, 0.0, 0.0]) - 0.5)).astype(float)
    lam = 0.05
    reference = linear_model.LogisticRegression(C=1.0 / (len(y) * lam), tol=1e-10, max_iter=10000).fit(X, y)
    for optimizer in ("gd", "lbfgs"):
        weights, intercept, info = fit_logistic(X, y, lam, TrainConfig(optimizer=optimizer))
        assert info["optimizer"] == optimizer
        assert weights == pytest.approx(reference.coef_[0], abs=1e-4)
        assert intercept == pytest.approx(reference.intercept_[0], abs=1e-4)


def test_single_task_model_reduces_to_plain_logistic():
    matrix = year_matrix(years=(2016,))
    lam = 0.02
    config = TrainConfig(days_per_encounter=3, regularization=lam, tolerance=1e-12, max_iterations=200000)
    model = train(matrix, config)
    assert model.tasks == [2016]
    assert model.metadata["training"]["converged"]
    plain, intercept, info = fit_logistic(matrix.X, matrix.labels, lam / 2, config)
    assert info["converged"]
    plain_scores = sigmoid(matrix.X @ plain + intercept)
    assert np.max(np.abs(score_matrix(model, matrix) - plain_scores)) <= 1e-9
    assert model.shared_weights == pytest.approx(model.task_weights[2016], abs=1e-8)


def test_gradient_descent_keeps_params_when_no_step_decreases(monkeypatch):
    true_loss_and_grad = risk_model.loss_and_grad

    def wrong_direction(params, X, y, lam):
        loss, grad = true_loss_and_grad(params, X, y, lam)
        return loss, -grad

    monkeypatch.setattr(risk_model, "loss_and_grad", wrong_direction)
    matrix = year_matrix()
    weights, intercept, info = fit_logistic(matrix.X, matrix.labels, 0.1, TrainConfig(optimizer="gd"))
    assert not info["converged"]
    assert info["iterations"] == 1
    assert weights.tolist() == [0.0] * matrix.n_cols
    assert intercept == pytest.approx(0.0)


def test_gradient_descent_reaches_tight_tolerance():
    matrix = year_matrix()
    config = TrainConfig(optimizer="gd", tolerance=1e-11, max_iterations=100000)
    _, _, info = fit_logistic(matrix.X, matrix.labels, 0.05, config)
    assert info["converged"]
    assert info["gradient_norm"] <= 1e-11


def test_run_default_optimizer_converges_at_weak_regularization():
    config = RunConfig().train_config()
    assert config.optimizer == "lbfgs"
    config.regularization = 1e-4
    model = train(year_matrix(per_year=60), config)
    assert model.metadata["training"]["converged"]


def test_separable_data_is_ranked_perfectly():
    matrix = year_matrix(signal=1.0)
    model = train(matrix, TrainConfig(regularization=1e-3))
    per_encounter = max_scores_by_encounter(matrix, score_matrix(model, matrix))
    labels = matrix.encounter_labels().loc[per_encounter.index]
    assert auroc(per_encounter.to_numpy(), labels.to_numpy()) == 1.0
    assert model.shared_weights[0] > 0


def test_training_is_deterministic():
    config = TrainConfig(days_per_encounter=2, regularization=0.01, seed=3)
    first, second = train(year_matrix(), config), train(year_matrix(), config)
    assert first.shared_weights.tolist() == second.shared_weights.tolist()
    assert first.metadata["seed"] == 3


def test_single_label_class_is_rejected():
    matrix = toy_matrix([[1, 0]] * 3, ["A"] * 3, [date(2015, 1, d) for d in (1, 2, 3)], [0, 0, 0])
    with pytest.raises(DegenerateLabelError):
        train(matrix, TrainConfig(regularization=0.1))


def test_cross_validation_ties_go_to_stronger_regularization():
    matrix = year_matrix(zeros=True)
    result = cross_validate(matrix, TrainConfig(grid=[0.001, 0.1, 0.01]))
    assert result.chosen == 0.1
    assert set(result.table["held_out_year"]) == {2013, 2014}
    assert result.table["auroc"].astype(float).tolist() == [0.5] * 6


def test_cross_validation_needs_two_years():
    with pytest.raises(FoldError):
        cross_validate(year_matrix(years=(2013,)), TrainConfig())


def test_single_grid_value_skips_cross_validation():
    model = train(year_matrix(), TrainConfig(grid=[0.05]))
    assert model.regularization_strength == 0.05
    assert "cv" not in model.metadata
    model = train(year_matrix(), TrainConfig(grid=[0.01, 0.1]))
    assert len(model.metadata["cv"]) == 4


def test_invalid_train_config():
    for config in (TrainConfig(grid=[]), TrainConfig(grid=[0.0]), TrainConfig(optimizer="newton"),
                   TrainConfig(days_per_encounter=0)):
        with pytest.raises(ConfigError):
            config.validate()


def hand_model():
    return RiskModel(
        columns=["a", "b"],
        tasks=[2013, 2014],
        shared_weights=np.array([1.0, 0.0]),
        task_weights={2013: np.array([0.0, 1.0]), 2014: np.array([0.0, -1.0])},
        intercept=-0.5,
        regularization_strength=0.1,
    )


def test_predict_day_uses_latest_task_block():
    model = hand_model()
    row = np.array([1.0, 1.0])
    assert predict_day(model, row, date(2020, 1, 1)) == pytest.approx(float(sigmoid(np.array([-0.5]))[0]))
    assert predict_day(model, row, date(2013, 6, 1)) == pytest.approx(float(sigmoid(np.array([1.5]))[0]))
    assert predict_day(model, row, 2010) == predict_day(model, row, 2013)
    with pytest.raises(SchemaError):
        predict_day(model, np.array([1.0]), 2013)


def test_score_matrix_agrees_with_predict_day():
    model = hand_model()
    matrix = toy_matrix([[1, 1], [0, 1], [1, 0]], ["A", "A", "B"],
                        [date(2013, 5, 1), date(2014, 5, 2), date(2021, 1, 1)], [0, 0, 1])
    scores = score_matrix(model, matrix)
    for i, day in enumerate(matrix.rows["date"]):
        assert scores[i] == pytest.approx(predict_day(model, matrix.X[i], day))
    assert max_scores_by_encounter(matrix, scores).to_dict() == {"A": max(scores[:2]), "B": scores[2]}
    with pytest.raises(SchemaError):
        score_matrix(model, matrix.select_columns(["b", "a"]))


def test_encounter_max_score():
    assert encounter_max_score([0.2, 0.7, 0.4]) == 0.7
    assert encounter_max_score([None, 0.3]) == 0.3
    assert encounter_max_score([]) is None


def test_model_round_trip():
    model = hand_model()
    restored = RiskModel.from_dict(model.to_dict())
    assert restored.tasks == model.tasks
    assert restored.task_weights[2014].tolist() == [0.0, -1.0]
    data = model.to_dict()
    data["schema_version"] = "0"
    with pytest.raises(ConfigError):
        RiskModel.from_dict(data)
    with pytest.raises(SchemaError):
        RiskModel(["a"], [2013], np.zeros(2), {2013: np.zeros(2)}, 0.0, 0.1)


@pytest.mark.slow
def test_null_signal_has_chance_discrimination():
    train_matrix = year_matrix(seed=4, per_year=1000, signal=0.5)
    test_matrix = year_matrix(seed=5, years=(2015,), per_year=5000, signal=0.5)
    model = train(train_matrix, TrainConfig(optimizer="lbfgs"))
    per_encounter = max_scores_by_encounter(test_matrix, score_matrix(model, test_matrix))
    labels = test_matrix.encounter_labels().loc[per_encounter.index]
    assert len(per_encounter) == 5000
    assert auroc(per_encounter.to_numpy(), labels.to_numpy()) == pytest.approx(0.5, abs=0.05)
