"""
Exception hierarchy shared across the laboratory.
"""
from typing import Optional


class ShiftLabError(Exception):
    """Base class for all laboratory errors."""


class ConfigError(ShiftLabError):
    """Invalid configuration; carries the dotted path of the offending key."""

    def __init__(self, message: str, key_path: Optional[str] = None):
        self.key_path = key_path
        if key_path:
            message = f"{key_path}: {message}"
        super().__init__(message)


class TemporalBoundsError(ShiftLabError):
    """Extraction requested outside the period it can see."""


class DataError(ShiftLabError):
    """Malformed or inconsistent data."""

    def __init__(self, message: str, source: Optional[str] = None, line: Optional[int] = None):
        self.source = source
        self.line = line
        where = []
        if source:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{':'.join(where)}: {message}"
        super().__init__(message)


class InclusionViolationError(DataError):
    """An encounter does not satisfy a guarantee of the inclusion criteria."""


class DegenerateLabelError(DataError):
    """Training data with a single label class."""


class DegenerateFeatureError(ShiftLabError):
    """Too few values to learn bins for a numeric feature."""


class SchemaError(ShiftLabError):
    """Feature matrices with different column sets."""


class TaskMappingError(ShiftLabError):
    """Unknown multitask block."""


class FoldError(ShiftLabError):
    """Cross validation cannot be partitioned by year."""


class TaxonomyError(ShiftLabError):
    """Unknown feature group or malformed group hierarchy."""


class UndefinedMetricError(ShiftLabError):
    """Metric precondition not met (e.g. single-class AUROC)."""


class MissingInputError(ShiftLabError):
    """An input file required by a stage does not exist."""

    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"missing input file: {self.path}")
