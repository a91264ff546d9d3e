"""
Binary encounter-day feature matrix.
"""
from dataclasses import dataclass, field
from datetime import date
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse

from features.taxonomy import FeatureTaxonomy
from utils.errors import DataError, SchemaError

ROW_COLUMNS = ["encounter_id", "date", "day_of_stay", "admit_month_year", "label"]


def canonical_csr(X) -> sparse.csr_matrix:
    """Binary CSR with sorted indices, no duplicates and no explicit zeros."""
    X = sparse.csr_matrix(X, dtype=np.float64)
    X.sum_duplicates()
    X.eliminate_zeros()
    X.data[:] = 1.0
    X.sort_indices()
    return X


@dataclass
class FeatureMatrix:
    """
    Rows are encounter-days (metadata in `rows`), columns are binary feature
    columns; `column_groups` maps each column to its leaf feature group.
    """
    X: sparse.csr_matrix
    rows: pd.DataFrame
    columns: List[str]
    column_groups: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.X = canonical_csr(self.X)
        self.rows = self.rows.reset_index(drop=True)
        missing = [c for c in ROW_COLUMNS if c not in self.rows.columns]
        if missing:
            raise DataError(f"row metadata lacks columns {missing}")
        if self.X.shape != (len(self.rows), len(self.columns)):
            raise DataError(f"matrix shape {self.X.shape} does not match {len(self.rows)} rows "
                            f"x {len(self.columns)} columns")
        if self.column_groups and len(self.column_groups) != len(self.columns):
            raise DataError("column group map does not cover every column")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_cols(self) -> int:
        return self.X.shape[1]

    @property
    def n_empty_rows(self) -> int:
        """Rows without any active cell."""
        return int(np.sum(np.diff(self.X.indptr) == 0))

    @property
    def labels(self) -> np.ndarray:
        return self.rows["label"].to_numpy(dtype=np.int64)

    def keys(self) -> List[Tuple[str, date]]:
        return list(zip(self.rows["encounter_id"], self.rows["date"]))

    def key_index(self) -> Dict[Tuple[str, date], int]:
        return {key: i for i, key in enumerate(self.keys())}

    def encounter_labels(self) -> pd.Series:
        """One label per encounter."""
        return self.rows.groupby("encounter_id", sort=False)["label"].max()

    def column_index(self) -> Dict[str, int]:
        return {c: i for i, c in enumerate(self.columns)}

    def select_columns(self, columns: Sequence[str]) -> 'FeatureMatrix':
        """Restrict to `columns`, in the given order."""
        index = self.column_index()
        unknown = [c for c in columns if c not in index]
        if unknown:
            raise SchemaError(f"columns not in matrix: {unknown[:5]}")
        picks = [index[c] for c in columns]
        groups = [self.column_groups[i] for i in picks] if self.column_groups else []
        return FeatureMatrix(self.X[:, picks], self.rows, list(columns), groups)

    def take_rows(self, indices: Iterable[int]) -> 'FeatureMatrix':
        picks = np.asarray(list(indices), dtype=np.int64)
        return FeatureMatrix(self.X[picks], self.rows.iloc[picks], list(self.columns), list(self.column_groups))

    def restrict_window(self, start: date, end: date) -> 'FeatureMatrix':
        """Rows whose calendar date lies in [start, end]."""
        dates = self.rows["date"]
        mask = ((dates >= start) & (dates <= end)).to_numpy()
        return self.take_rows(np.flatnonzero(mask))

    def group_columns(self, group: str, taxonomy: FeatureTaxonomy) -> np.ndarray:
        """Indices of columns under a (leaf or roll-up) group."""
        leaves = set(taxonomy.descendant_leaves(group))
        return np.array([i for i, g in enumerate(self.column_groups) if g in leaves], dtype=np.int64)

    def check_binary(self):
        if self.X.nnz and not np.all(self.X.data == 1.0):
            raise DataError("feature matrix holds non-binary values")
