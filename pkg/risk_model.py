"""
Multitask L2-regularized logistic risk model.

Inputs are expanded to [shared block | one block per training year]; a row
fills the shared block and the block of its task. Rows dated after the last
training year use the most recent block, rows dated before the first use the
first block.
"""
import logging
from dataclasses import dataclass, field
from datetime import date
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.optimize import minimize

from analysis.metrics import auroc
from features.matrix import FeatureMatrix
from utils.constants import (
    ARMIJO_C,
    BACKTRACK_FACTOR,
    LOSS_ROUNDING,
    MIN_STEP,
    MODEL_VERSION,
    TRAIN_DAYS_PER_ENCOUNTER,
    TRAIN_DEFAULT_GRID,
    TRAIN_MAX_ITERATIONS,
    TRAIN_TOLERANCE,
    WOLFE_CURVATURE,
)
from utils.errors import (
    ConfigError,
    DegenerateLabelError,
    FoldError,
    InclusionViolationError,
    SchemaError,
    TaskMappingError,
    UndefinedMetricError,
)
from utils.rng import stream
from utils.statistics import sigmoid

LOGGER = logging.getLogger(__name__)

OPTIMIZER_GD = "gd"
OPTIMIZER_LBFGS = "lbfgs"


@dataclass
class TrainConfig:
    """Training and model-selection settings."""
    days_per_encounter: int = TRAIN_DAYS_PER_ENCOUNTER
    grid: List[float] = field(default_factory=lambda: list(TRAIN_DEFAULT_GRID))
    regularization: Optional[float] = None   # skips cross validation when set
    tolerance: float = TRAIN_TOLERANCE
    max_iterations: int = TRAIN_MAX_ITERATIONS
    optimizer: str = OPTIMIZER_GD
    seed: int = 0

    def validate(self):
        if self.days_per_encounter < 1:
            raise ConfigError("days_per_encounter must be at least 1", "train.days_per_encounter")
        if not self.grid:
            raise ConfigError("regularization grid must not be empty", "train.grid")
        if any(value <= 0 for value in self.grid):
            raise ConfigError("regularization strengths must be positive", "train.grid")
        if self.regularization is not None and self.regularization <= 0:
            raise ConfigError("regularization strength must be positive", "train.regularization")
        if self.optimizer not in (OPTIMIZER_GD, OPTIMIZER_LBFGS):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}", "train.optimizer")
        if self.tolerance <= 0 or self.max_iterations < 1:
            raise ConfigError("tolerance and max_iterations must be positive", "train.tolerance")

    def to_dict(self) -> dict:
        return {
            'days_per_encounter': self.days_per_encounter,
            'grid': list(self.grid),
            'regularization': self.regularization,
            'tolerance': self.tolerance,
            'max_iterations': self.max_iterations,
            'optimizer': self.optimizer,
            'seed': self.seed,
        }

    @staticmethod
    def from_dict(data: dict) -> 'TrainConfig':
        config = TrainConfig(**data)
        config.validate()
        return config


@dataclass
class RiskModel:
    """Trained multitask logistic model f."""
    columns: List[str]
    tasks: List[int]
    shared_weights: np.ndarray
    task_weights: Dict[int, np.ndarray]
    intercept: float
    regularization_strength: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        width = len(self.columns)
        if self.shared_weights.shape != (width,):
            raise SchemaError(f"shared block has {self.shared_weights.shape[0]} weights for {width} columns")
        for task, weights in self.task_weights.items():
            if weights.shape != (width,):
                raise SchemaError(f"task block {task} has {weights.shape[0]} weights for {width} columns")
        if sorted(self.task_weights) != sorted(self.tasks):
            raise SchemaError("task blocks do not match the task list")

    def task_for(self, day: Union[date, int]) -> int:
        """Training year whose block scores `day` (a date or a calendar year)."""
        return task_of(day.year if isinstance(day, date) else int(day), self.tasks)

    def stacked_task_weights(self) -> np.ndarray:
        return np.stack([self.task_weights[t] for t in self.tasks])

    def to_dict(self) -> dict:
        return {
            'schema_version': MODEL_VERSION,
            'columns': list(self.columns),
            'tasks': list(self.tasks),
            'shared_weights': self.shared_weights.tolist(),
            'task_weights': {str(t): self.task_weights[t].tolist() for t in self.tasks},
            'intercept': self.intercept,
            'regularization_strength': self.regularization_strength,
            'metadata': self.metadata,
        }

    @staticmethod
    def from_dict(data: dict) -> 'RiskModel':
        if data.get('schema_version') != MODEL_VERSION:
            raise ConfigError(f"unsupported model version {data.get('schema_version')!r}", "schema_version")
        return RiskModel(
            columns=list(data['columns']),
            tasks=[int(t) for t in data['tasks']],
            shared_weights=np.asarray(data['shared_weights'], dtype=np.float64),
            task_weights={int(t): np.asarray(w, dtype=np.float64) for t, w in data['task_weights'].items()},
            intercept=float(data['intercept']),
            regularization_strength=float(data['regularization_strength']),
            metadata=data.get('metadata', {}),
        )


@dataclass
class CVResult:
    """Chosen strength and the per-fold held-out AUROC table."""
    chosen: float
    table: pd.DataFrame


def task_of(year: int, tasks: Sequence[int]) -> int:
    """Latest training year not after `year`; the first year for earlier dates."""
    if not tasks:
        raise TaskMappingError("model has no task blocks")
    earlier = [t for t in tasks if t <= year]
    return max(earlier) if earlier else min(tasks)


def multitask_expand(row, task: int, n_tasks: int) -> np.ndarray:
    """[row | zeros ... row in block `task` ... zeros], width = d * (1 + n_tasks)."""
    if not 0 <= task < n_tasks:
        raise TaskMappingError(f"task {task} outside 0..{n_tasks - 1}")
    row = np.asarray(row.toarray()).ravel() if sparse.issparse(row) else np.asarray(row).ravel()
    width = row.shape[0]
    expanded = np.zeros(width * (1 + n_tasks), dtype=row.dtype)
    expanded[:width] = row
    start = width * (1 + task)
    expanded[start:start + width] = row
    return expanded


def expand_matrix(X: sparse.csr_matrix, task_index: np.ndarray, n_tasks: int) -> sparse.csr_matrix:
    """Row-wise multitask expansion of a sparse matrix."""
    task_index = np.asarray(task_index, dtype=np.int64)
    if task_index.size and (task_index.min() < 0 or task_index.max() >= n_tasks):
        raise TaskMappingError(f"task index outside 0..{n_tasks - 1}")
    blocks = [X]
    for t in range(n_tasks):
        mask = sparse.diags((task_index == t).astype(np.float64))
        blocks.append(mask @ X)
    expanded = sparse.hstack(blocks, format="csr")
    expanded.eliminate_zeros()
    return expanded


def row_years(matrix: FeatureMatrix) -> np.ndarray:
    return np.array([d.year for d in matrix.rows["date"]], dtype=np.int64)


def admit_years(matrix: FeatureMatrix) -> np.ndarray:
    return matrix.rows["admit_month_year"].str.slice(0, 4).astype(int).to_numpy()


def task_indices(matrix: FeatureMatrix, tasks: Sequence[int]) -> np.ndarray:
    position = {t: i for i, t in enumerate(tasks)}
    return np.array([position[task_of(int(y), tasks)] for y in row_years(matrix)], dtype=np.int64)


def subsample_days(matrix: FeatureMatrix, days_per_encounter: int, seed: int) -> np.ndarray:
    """
    Sorted row indices with exactly `days_per_encounter` rows per encounter,
    drawn without replacement from stream (seed, encounter_id).

    Raises:
        InclusionViolationError: an encounter has fewer rows.
    """
    picks = []
    groups = matrix.rows.groupby("encounter_id", sort=False).indices
    for encounter_id, rows in groups.items():
        if len(rows) < days_per_encounter:
            raise InclusionViolationError(
                f"{len(rows)} rows, need {days_per_encounter} for subsampling", source=encounter_id
            )
        rng = stream(seed, "subsample", encounter_id)
        picks.append(rng.choice(np.sort(rows), size=days_per_encounter, replace=False))
    if not picks:
        return np.zeros(0, dtype=np.int64)
    return np.sort(np.concatenate(picks)).astype(np.int64)


def loss_and_grad(params: np.ndarray, X, y: np.ndarray, lam: float) -> Tuple[float, np.ndarray]:
    """
    Mean cross-entropy plus lam/2 * ||w||^2; params = [w..., b], the
    intercept b is not penalized.
    """
    w, b = params[:-1], params[-1]
    z = X @ w + b
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z)) + 0.5 * lam * float(w @ w)
    residual = (sigmoid(z) - y) / len(y)
    grad = np.empty_like(params)
    grad[:-1] = X.T @ residual + lam * w
    grad[-1] = residual.sum()
    return loss, grad


def _initial_params(y: np.ndarray, width: int) -> np.ndarray:
    params = np.zeros(width + 1)
    rate = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
    params[-1] = np.log(rate / (1 - rate))
    return params


def _accept_step(loss, candidate_loss, step, norm_sq, directional) -> bool:
    """
    Armijo sufficient decrease; once loss differences sink below rounding,
    the approximate Wolfe test on the directional derivative
    `directional = grad(candidate) . grad` decides instead.
    """
    if candidate_loss <= loss - ARMIJO_C * step * norm_sq:
        return True
    if candidate_loss > loss + LOSS_ROUNDING * abs(loss):
        return False
    return -(1.0 - 2.0 * ARMIJO_C) * norm_sq <= directional <= WOLFE_CURVATURE * norm_sq


def _gradient_descent(X, y, lam, config: TrainConfig) -> Tuple[np.ndarray, dict]:
    params = _initial_params(y, X.shape[1])
    loss, grad = loss_and_grad(params, X, y, lam)
    step = 1.0
    iterations = 0
    converged = False
    for iterations in range(1, config.max_iterations + 1):
        norm_sq = float(grad @ grad)
        if np.sqrt(norm_sq) <= config.tolerance:
            converged = True
            break
        step = min(step * 2.0, 1e4)
        accepted = False
        while step >= MIN_STEP:
            candidate = params - step * grad
            candidate_loss, candidate_grad = loss_and_grad(candidate, X, y, lam)
            if _accept_step(loss, candidate_loss, step, norm_sq, float(candidate_grad @ grad)):
                accepted = True
                break
            step *= BACKTRACK_FACTOR
        if not accepted:
            # no step along -grad decreases the loss; params stay put
            break
        params, loss, grad = candidate, candidate_loss, candidate_grad
    else:
        converged = bool(np.linalg.norm(grad) <= config.tolerance)
    return params, {
        'optimizer': OPTIMIZER_GD,
        'converged': converged,
        'iterations': iterations,
        'gradient_norm': float(np.linalg.norm(grad)),
        'loss': loss,
    }


def _lbfgs(X, y, lam, config: TrainConfig) -> Tuple[np.ndarray, dict]:
    result = minimize(
        loss_and_grad, _initial_params(y, X.shape[1]), args=(X, y, lam), jac=True, method="L-BFGS-B",
        options={'maxiter': config.max_iterations, 'gtol': config.tolerance},
    )
    return result.x, {
        'optimizer': OPTIMIZER_LBFGS,
        'converged': bool(result.success),
        'iterations': int(result.nit),
        'gradient_norm': float(np.linalg.norm(result.jac)),
        'loss': float(result.fun),
    }


def fit_logistic(X, y: np.ndarray, lam: float, config: TrainConfig) -> Tuple[np.ndarray, float, dict]:
    """Minimize the regularized loss; returns (weights, intercept, optimizer report)."""
    y = np.asarray(y, dtype=np.float64)
    fit = _lbfgs if config.optimizer == OPTIMIZER_LBFGS else _gradient_descent
    params, info = fit(X, y, lam, config)
    if not info['converged']:
        LOGGER.warning("optimizer stopped after %d iterations, gradient norm %.3g",
                       info['iterations'], info['gradient_norm'], extra={"stage": "train"})
    return params[:-1], float(params[-1]), info


def _check_labels(matrix: FeatureMatrix):
    labels = matrix.encounter_labels()
    if labels.nunique() < 2:
        raise DegenerateLabelError("training data need positive and negative encounters")


def _fit_on_rows(matrix: FeatureMatrix, rows: np.ndarray, lam: float, config: TrainConfig) -> RiskModel:
    years = admit_years(matrix)
    tasks = sorted({int(y) for y in years[rows]})
    sub = matrix.take_rows(rows)
    X = expand_matrix(sub.X, task_indices(sub, tasks), len(tasks))
    weights, intercept, info = fit_logistic(X, sub.labels, lam, config)
    d = matrix.n_cols
    return RiskModel(
        columns=list(matrix.columns),
        tasks=tasks,
        shared_weights=weights[:d].copy(),
        task_weights={t: weights[d * (1 + i): d * (2 + i)].copy() for i, t in enumerate(tasks)},
        intercept=intercept,
        regularization_strength=lam,
        metadata={'training': info, 'n_rows': int(len(rows)), 'seed': config.seed},
    )


def cross_validate(matrix: FeatureMatrix, config: TrainConfig) -> CVResult:
    """
    Year-fold cross validation over the grid; the strength with the best mean
    held-out AUROC wins, ties going to the stronger one.

    Raises:
        FoldError: fewer than two admission years.
    """
    config.validate()
    years = admit_years(matrix)
    distinct = sorted(set(int(y) for y in years))
    if len(distinct) < 2:
        raise FoldError(f"cross validation by year needs at least two years, got {distinct}")
    sampled = subsample_days(matrix, config.days_per_encounter, config.seed)

    records = []
    for lam in config.grid:
        for held_out in distinct:
            train_rows = sampled[years[sampled] != held_out]
            test = matrix.take_rows(np.flatnonzero(years == held_out))
            value = None
            if train_rows.size and matrix.take_rows(train_rows).encounter_labels().nunique() == 2:
                model = _fit_on_rows(matrix, train_rows, lam, config)
                per_encounter = max_scores_by_encounter(test, score_matrix(model, test))
                labels = test.encounter_labels().loc[per_encounter.index]
                try:
                    value = auroc(per_encounter.to_numpy(), labels.to_numpy())
                except UndefinedMetricError:
                    value = None
            records.append((lam, held_out, value, int(test.rows["encounter_id"].nunique())))

    table = pd.DataFrame(records, columns=["regularization", "held_out_year", "auroc", "n_encounters"])
    means = table.assign(auroc=pd.to_numeric(table["auroc"])).groupby("regularization")["auroc"].mean()
    if means.isna().all():
        chosen = max(config.grid)
        LOGGER.warning("no fold produced an AUROC; using the strongest regularization %g", chosen,
                       extra={"stage": "train"})
    else:
        best = means.max()
        chosen = max(lam for lam, value in means.items() if value >= best - 1e-12)
    LOGGER.info("cross validation chose regularization %g", chosen, extra={"stage": "train"})
    return CVResult(float(chosen), table)


def train(matrix: FeatureMatrix, config: TrainConfig) -> RiskModel:
    """
    Fit f on `days_per_encounter` sampled days per encounter, each carrying
    its encounter label.

    Raises:
        DegenerateLabelError: only one label class.
    """
    config.validate()
    _check_labels(matrix)
    cv = None
    if config.regularization is not None:
        lam = config.regularization
    elif len(config.grid) == 1:
        lam = config.grid[0]
    else:
        cv = cross_validate(matrix, config)
        lam = cv.chosen
    rows = subsample_days(matrix, config.days_per_encounter, config.seed)
    model = _fit_on_rows(matrix, rows, lam, config)
    model.metadata['grid'] = list(config.grid)
    if cv is not None:
        model.metadata['cv'] = cv.table.to_dict(orient="records")
    LOGGER.info("trained on %d rows, %d tasks, regularization %g", len(rows), len(model.tasks), lam,
                extra={"stage": "train"})
    return model


def predict_day(model: RiskModel, row, day: Union[date, int]) -> float:
    """logistic(intercept + shared . row + task(day) . row)"""
    row = np.asarray(row.toarray()).ravel() if sparse.issparse(row) else np.asarray(row, dtype=np.float64).ravel()
    if row.shape[0] != len(model.columns):
        raise SchemaError(f"row width {row.shape[0]} differs from model width {len(model.columns)}")
    z = model.intercept + row @ model.shared_weights + row @ model.task_weights[model.task_for(day)]
    return float(sigmoid(np.array([z]))[0])


def score_matrix(model: RiskModel, matrix: FeatureMatrix) -> np.ndarray:
    """predict_day for every row of a matrix."""
    if list(matrix.columns) != list(model.columns):
        raise SchemaError("matrix columns differ from the model's columns")
    if matrix.n_rows == 0:
        return np.zeros(0)
    task_rows = task_indices(matrix, model.tasks)
    per_task = matrix.X @ model.stacked_task_weights().T
    z = model.intercept + matrix.X @ model.shared_weights + per_task[np.arange(matrix.n_rows), task_rows]
    return sigmoid(z)


def encounter_max_score(scores: Sequence[float]) -> Optional[float]:
    """Maximum daily score; None when no day was scored."""
    values = [s for s in scores if s is not None]
    return float(max(values)) if values else None


def max_scores_by_encounter(matrix: FeatureMatrix, scores: np.ndarray) -> pd.Series:
    """Encounter max score, indexed by encounter id in first-appearance order."""
    frame = pd.DataFrame({"encounter_id": matrix.rows["encounter_id"].to_numpy(), "score": scores})
    return frame.groupby("encounter_id", sort=False)["score"].max()
