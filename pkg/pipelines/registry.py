"""
Pipeline registry for creating pipelines by mode, plus the extraction entry points.
"""
from typing import Dict, Iterable, Optional, Sequence, Set, Type

from ehr_model import EncounterTruth, RawExtract
from pipelines.base import BasePipeline
from pipelines.config import PipelineConfig
from pipelines.prospective import ProspectivePipeline
from pipelines.retrospective import RetrospectivePipeline
from utils.constants import PIPELINE_PROSPECTIVE, PIPELINE_RETROSPECTIVE
from utils.errors import ConfigError


class PipelineRegistry:
    """Registry for all available pipeline modes."""

    _registry: Dict[str, Type[BasePipeline]] = {}

    @classmethod
    def register(cls, mode: str, pipeline_class: Type[BasePipeline]):
        """Register a pipeline type."""
        cls._registry[mode.lower()] = pipeline_class

    @classmethod
    def create(cls, config: PipelineConfig) -> BasePipeline:
        """Create the pipeline for a config."""
        mode = config.mode.lower()
        if mode not in cls._registry:
            raise ConfigError(f"unknown pipeline mode: {config.mode}", "mode")
        return cls._registry[mode](config)

    @classmethod
    def get_all_modes(cls) -> list:
        """Get list of all registered modes."""
        return sorted(cls._registry.keys())


PipelineRegistry.register(PIPELINE_RETROSPECTIVE, RetrospectivePipeline)
PipelineRegistry.register(PIPELINE_PROSPECTIVE, ProspectivePipeline)


def extract(truth: Sequence[EncounterTruth], pipeline: PipelineConfig, as_of: int,
            encounter_ids: Optional[Iterable[str]] = None) -> RawExtract:
    """Per encounter-day, the event values visible to `pipeline`."""
    return PipelineRegistry.create(pipeline).extract(truth, as_of, encounter_ids)


def select_cohort(truth: Sequence[EncounterTruth], pipeline: PipelineConfig, as_of: int) -> Set[str]:
    """Encounter ids `pipeline` identifies as its study population as of `as_of`."""
    return PipelineRegistry.create(pipeline).select_cohort(truth, as_of)
