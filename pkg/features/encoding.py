"""
Feature encoding: categorical one-hot, numeric quintile bins with a missing
bin, rare-column pruning. Everything is fitted on training extracts only and
frozen afterwards.
"""
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse

from ehr_model import DayRecord, RawExtract
from features.matrix import FeatureMatrix
from features.taxonomy import FeatureKind, FeatureTaxonomy
from utils.constants import (
    DEFAULT_MIN_ENCOUNTERS,
    FEATURE_SPEC_VERSION,
    MIN_VALUES_FOR_BINS,
    N_QUINTILE_BOUNDS,
    PENDING_VALUE,
)
from utils.errors import ConfigError, DegenerateFeatureError, InclusionViolationError
from utils.statistics import linear_percentile

LOGGER = logging.getLogger(__name__)

_QUINTILES = [20.0, 40.0, 60.0, 80.0]


def fit_quintile_bins(values: Sequence[float]) -> Tuple[float, ...]:
    """
    Four split points at the 20/40/60/80th linear-interpolation percentiles.

    Raises:
        DegenerateFeatureError: fewer than 5 non-missing values.
    """
    array = np.asarray([v for v in values if v is not None], dtype=np.float64)
    array = array[~np.isnan(array)]
    if array.size < MIN_VALUES_FOR_BINS:
        raise DegenerateFeatureError(f"{array.size} values, need at least {MIN_VALUES_FOR_BINS} for quintile bins")
    bounds = linear_percentile(array, _QUINTILES)
    return tuple(float(b) for b in bounds)


@dataclass(frozen=True)
class FeatureSpec:
    """Encoding of one raw feature into binary columns."""
    feature_id: int
    name: str
    group: str
    kind: FeatureKind
    categories: Tuple[str, ...] = ()
    quintile_bounds: Tuple[float, ...] = ()
    include_missing_bin: bool = True
    demoted: bool = False   # too few training values: missing bin only

    @property
    def n_value_bins(self) -> int:
        if self.kind == FeatureKind.CATEGORICAL:
            return len(self.categories)
        return 0 if self.demoted else N_QUINTILE_BOUNDS + 1

    @property
    def width(self) -> int:
        missing = self.kind == FeatureKind.NUMERIC and self.include_missing_bin
        return self.n_value_bins + (1 if missing else 0)

    def column_ids(self) -> List[str]:
        if self.kind == FeatureKind.CATEGORICAL:
            return [f"{self.name}={c}" for c in self.categories]
        columns = [f"{self.name}#q{k}" for k in range(1, self.n_value_bins + 1)]
        if self.include_missing_bin:
            columns.append(f"{self.name}#missing")
        return columns

    def offset_of(self, value: Any) -> Optional[int]:
        """
        Local column of a value, None for an all-zero encoding.
        A value equal to a bound lands in the lower bin.
        """
        if self.kind == FeatureKind.CATEGORICAL:
            if value is None:
                return None
            try:
                return self.categories.index(str(value))
            except ValueError:
                return None
        if value is None or value == PENDING_VALUE:
            return self.n_value_bins if self.include_missing_bin else None
        if self.demoted:
            return None
        return int(np.searchsorted(self.quintile_bounds, float(value), side="left"))

    def to_dict(self) -> dict:
        return {
            'feature_id': self.feature_id,
            'name': self.name,
            'group': self.group,
            'kind': self.kind.value,
            'categories': list(self.categories),
            'quintile_bounds': list(self.quintile_bounds),
            'include_missing_bin': self.include_missing_bin,
            'demoted': self.demoted,
        }

    @staticmethod
    def from_dict(data: dict) -> 'FeatureSpec':
        spec = FeatureSpec(
            feature_id=data['feature_id'],
            name=data['name'],
            group=data['group'],
            kind=FeatureKind(data['kind']),
            categories=tuple(data.get('categories', ())),
            quintile_bounds=tuple(float(b) for b in data.get('quintile_bounds', ())),
            include_missing_bin=data.get('include_missing_bin', True),
            demoted=data.get('demoted', False),
        )
        bounds = spec.quintile_bounds
        if any(b > a for a, b in zip(bounds[1:], bounds)):
            raise ConfigError(f"quintile bounds of {spec.name} must be non-decreasing", "quintile_bounds")
        return spec


@dataclass
class FeatureSpecSet:
    """Ordered specs, their column layout and the frozen retained columns."""
    specs: List[FeatureSpec] = field(default_factory=list)
    retained: Optional[List[str]] = None
    version: str = FEATURE_SPEC_VERSION

    def __post_init__(self):
        self._layout()

    def _layout(self):
        self.offsets: Dict[int, int] = {}
        self.all_columns: List[str] = []
        self.all_groups: List[str] = []
        for spec in self.specs:
            self.offsets[spec.feature_id] = len(self.all_columns)
            columns = spec.column_ids()
            self.all_columns.extend(columns)
            self.all_groups.extend([spec.group] * len(columns))
        self._by_id = {spec.feature_id: spec for spec in self.specs}

    @property
    def full_width(self) -> int:
        return len(self.all_columns)

    @property
    def columns(self) -> List[str]:
        return list(self.retained) if self.retained is not None else list(self.all_columns)

    def spec(self, feature_id: int) -> Optional[FeatureSpec]:
        return self._by_id.get(feature_id)

    def with_retained(self, columns: Iterable[str]) -> 'FeatureSpecSet':
        """Freeze the retained column set (kept in full-layout order)."""
        keep = set(columns)
        unknown = keep - set(self.all_columns)
        if unknown:
            raise ConfigError(f"unknown columns in retained set: {sorted(unknown)[:5]}", "retained")
        return FeatureSpecSet(list(self.specs), [c for c in self.all_columns if c in keep], self.version)

    def to_dict(self) -> dict:
        return {
            'schema_version': self.version,
            'specs': [spec.to_dict() for spec in self.specs],
            'retained': self.retained,
        }

    @staticmethod
    def from_dict(data: dict) -> 'FeatureSpecSet':
        version = data.get('schema_version')
        if version != FEATURE_SPEC_VERSION:
            raise ConfigError(f"unsupported feature spec version {version!r}", "schema_version")
        return FeatureSpecSet([FeatureSpec.from_dict(s) for s in data['specs']], data.get('retained'), version)


@dataclass
class EncodingReport:
    """Counts of values that encoded to all-zero because training never saw them."""
    n_rows: int = 0
    unseen: Counter = field(default_factory=Counter)

    @property
    def n_unseen(self) -> int:
        return sum(self.unseen.values())


def fit_feature_specs(extracts: Sequence[RawExtract], taxonomy: FeatureTaxonomy,
                      include_missing_bin: bool = True) -> FeatureSpecSet:
    """Learn categories and quintile bounds from training extracts."""
    observed: Dict[int, List[Any]] = {f.feature_id: [] for f in taxonomy.features}
    for raw in extracts:
        for row in raw.rows:
            for feature_id, value in row.values.items():
                if feature_id in observed and value is not None and value != PENDING_VALUE:
                    observed[feature_id].append(value)

    specs = []
    for feature in taxonomy.features:
        values = observed[feature.feature_id]
        if feature.kind == FeatureKind.CATEGORICAL:
            categories = tuple(sorted({str(v) for v in values}))
            specs.append(FeatureSpec(feature.feature_id, feature.name, feature.group, feature.kind,
                                     categories=categories))
            continue
        try:
            bounds = fit_quintile_bins([float(v) for v in values])
            specs.append(FeatureSpec(feature.feature_id, feature.name, feature.group, feature.kind,
                                     quintile_bounds=bounds, include_missing_bin=include_missing_bin))
        except DegenerateFeatureError as e:
            LOGGER.warning("feature %s demoted to missing-only: %s", feature.name, e,
                           extra={"stage": "featurize"})
            specs.append(FeatureSpec(feature.feature_id, feature.name, feature.group, feature.kind,
                                     include_missing_bin=include_missing_bin, demoted=True))
    return FeatureSpecSet(specs)


def encode_columns(values: Dict[int, Any], spec_set: FeatureSpecSet,
                   report: Optional[EncodingReport] = None) -> List[int]:
    """Full-layout column indices set for one day's values."""
    columns = []
    for spec in spec_set.specs:
        value = values.get(spec.feature_id)
        offset = spec.offset_of(value)
        if offset is None:
            if report is not None and value not in (None, PENDING_VALUE) and spec.kind == FeatureKind.CATEGORICAL:
                report.unseen[spec.name] += 1
            continue
        columns.append(spec_set.offsets[spec.feature_id] + offset)
    return columns


def encode(record: DayRecord, spec_set: FeatureSpecSet, report: Optional[EncodingReport] = None) -> np.ndarray:
    """Binary row of width Σ spec widths for one encounter-day."""
    row = np.zeros(spec_set.full_width, dtype=np.int8)
    row[encode_columns(record.values, spec_set, report)] = 1
    return row


def build_feature_matrix(raw: RawExtract, labels: Dict[str, int],
                         spec_set: FeatureSpecSet) -> Tuple[FeatureMatrix, EncodingReport]:
    """
    Encode every row of an included extract into a FeatureMatrix restricted
    to the retained columns.

    Raises:
        InclusionViolationError: a row's encounter has no label.
    """
    report = EncodingReport()
    indptr = [0]
    indices: List[int] = []
    records = []
    for row in raw.rows:
        if row.encounter_id not in labels or row.encounter_id not in raw.encounters:
            raise InclusionViolationError("row of an encounter outside the included cohort",
                                          source=row.encounter_id)
        indices.extend(encode_columns(row.values, spec_set, report))
        indptr.append(len(indices))
        meta = raw.encounters[row.encounter_id]
        records.append((row.encounter_id, row.date, row.day_of_stay, meta.admit_month_year,
                        int(labels[row.encounter_id])))
    report.n_rows = len(records)

    full = sparse.csr_matrix(
        (np.ones(len(indices)), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(len(records), spec_set.full_width),
    )
    rows = pd.DataFrame.from_records(
        records, columns=["encounter_id", "date", "day_of_stay", "admit_month_year", "label"]
    )
    matrix = FeatureMatrix(full, rows, list(spec_set.all_columns), list(spec_set.all_groups))
    if spec_set.retained is not None:
        matrix = matrix.select_columns(spec_set.retained)
    if report.n_unseen:
        LOGGER.info("%d values of unseen categories encoded as all-zero", report.n_unseen,
                    extra={"stage": "featurize"})
    return matrix, report


def prune_rare(matrix: FeatureMatrix, min_encounters: int = DEFAULT_MIN_ENCOUNTERS) -> List[str]:
    """Columns active in at least `min_encounters` distinct training encounters."""
    if min_encounters < 0:
        raise ConfigError("min_encounters must not be negative", "featurize.min_encounters")
    if min_encounters == 0:
        return list(matrix.columns)
    codes, _ = pd.factorize(matrix.rows["encounter_id"])
    coo = matrix.X.tocoo()
    pairs = np.unique(np.stack([codes[coo.row], coo.col], axis=1), axis=0) if coo.nnz else np.empty((0, 2), int)
    counts = np.bincount(pairs[:, 1].astype(np.int64), minlength=matrix.n_cols)
    return [c for c, n in zip(matrix.columns, counts) if n >= min_encounters]
