"""
Metric registry for looking up performance measures by name.
"""
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

from analysis.metrics import ScoreSet, auroc, brier, confusion_at
from utils.errors import ConfigError, UndefinedMetricError

MetricFn = Callable[[ScoreSet], float]


@dataclass(frozen=True)
class MetricDef:
    """A named measure p and its orientation."""
    name: str
    higher_is_better: bool
    needs_threshold: bool = False


def _from_confusion(attribute: str, threshold: float) -> MetricFn:
    def metric(scores: ScoreSet) -> float:
        value = getattr(confusion_at(scores, threshold), attribute)
        if value is None:
            raise UndefinedMetricError(f"{attribute} has a zero denominator at threshold {threshold:g}")
        return value
    return metric


class MetricRegistry:
    """Registry for all available measures."""

    _registry: Dict[str, MetricDef] = {}
    _functions: Dict[str, MetricFn] = {}

    @classmethod
    def register(cls, definition: MetricDef, function: Optional[MetricFn] = None):
        """Register a measure; threshold measures are built per call."""
        cls._registry[definition.name] = definition
        if function is not None:
            cls._functions[definition.name] = function

    @classmethod
    def get(cls, name: str) -> MetricDef:
        if name not in cls._registry:
            raise ConfigError(f"unknown metric {name!r}; known: {cls.get_all_names()}", "metric")
        return cls._registry[name]

    @classmethod
    def create(cls, name: str, threshold: Optional[float] = None) -> MetricFn:
        """Callable computing the measure on a ScoreSet."""
        definition = cls.get(name)
        if definition.needs_threshold:
            if threshold is None:
                raise ConfigError(f"metric {name!r} needs a decision threshold", "threshold")
            return _from_confusion(name, threshold)
        return cls._functions[name]

    @classmethod
    def oriented(cls, name: str, value: float) -> float:
        """Value flipped so that larger always means better."""
        return value if cls.get(name).higher_is_better else -value

    @classmethod
    def get_all_names(cls) -> List[str]:
        return sorted(cls._registry)


MetricRegistry.register(MetricDef("auroc", higher_is_better=True), auroc)
MetricRegistry.register(MetricDef("brier", higher_is_better=False), brier)
MetricRegistry.register(MetricDef("sensitivity", higher_is_better=True, needs_threshold=True))
MetricRegistry.register(MetricDef("specificity", higher_is_better=True, needs_threshold=True))
MetricRegistry.register(MetricDef("ppv", higher_is_better=True, needs_threshold=True))
