"""
Pipeline configuration.
"""
import logging
from dataclasses import dataclass, field
from datetime import date
from typing import List, Tuple

from utils.constants import (
    COHORT_CENSUS,
    COHORT_CLASS_CODES,
    MINUTES_PER_DAY,
    PIPELINE_PROSPECTIVE,
    PIPELINE_RETROSPECTIVE,
    PRO_DAILY_CUTOFF_MINUTES,
    PRO_LAG_MAX_MINUTES,
    PRO_LAG_MIN_MINUTES,
    RETRO_LAG_MAX_MINUTES,
    RETRO_LAG_MIN_MINUTES,
)
from utils.errors import ConfigError
from utils.timeline import parse_date

LOGGER = logging.getLogger(__name__)

_DEFAULT_COHORT = {
    PIPELINE_RETROSPECTIVE: COHORT_CLASS_CODES,
    PIPELINE_PROSPECTIVE: COHORT_CENSUS,
}


@dataclass
class PipelineConfig:
    """How one pipeline sees the event stream."""
    mode: str = PIPELINE_RETROSPECTIVE
    extraction_lag: Tuple[int, int] = (RETRO_LAG_MIN_MINUTES, RETRO_LAG_MAX_MINUTES)
    sees_revisions_after_extraction: bool = True
    cohort_source: str = COHORT_CLASS_CODES
    outage_days: List[date] = field(default_factory=list)
    daily_cutoff: int = PRO_DAILY_CUTOFF_MINUTES
    seed: int = 0
    name: str = ""

    @staticmethod
    def retrospective(**overrides) -> 'PipelineConfig':
        """Research-warehouse style pipeline: settled data, 1-7 day lag, class codes."""
        config = PipelineConfig(name="retrospective")
        for key, value in overrides.items():
            setattr(config, key, value)
        config.validate()
        return config

    @staticmethod
    def prospective(**overrides) -> 'PipelineConfig':
        """Near-real-time pipeline: daily snapshots, <= 8 h lag, census cohort."""
        config = PipelineConfig(
            mode=PIPELINE_PROSPECTIVE,
            extraction_lag=(PRO_LAG_MIN_MINUTES, PRO_LAG_MAX_MINUTES),
            sees_revisions_after_extraction=False,
            cohort_source=COHORT_CENSUS,
            name="prospective",
        )
        for key, value in overrides.items():
            setattr(config, key, value)
        config.validate()
        return config

    def validate(self):
        """Check values and log unusual pairings."""
        if self.mode not in _DEFAULT_COHORT:
            raise ConfigError(f"unknown pipeline mode {self.mode!r}", "mode")
        if self.cohort_source not in (COHORT_CLASS_CODES, COHORT_CENSUS):
            raise ConfigError(f"unknown cohort source {self.cohort_source!r}", "cohort_source")
        low, high = self.extraction_lag
        if low < 0 or high < low:
            raise ConfigError(f"invalid lag range {self.extraction_lag}", "extraction_lag")
        if not 0 <= self.daily_cutoff < MINUTES_PER_DAY:
            raise ConfigError("daily cutoff must be a time of day in minutes", "daily_cutoff")
        self.outage_days = sorted(parse_date(d) for d in self.outage_days)
        if self.cohort_source != _DEFAULT_COHORT[self.mode]:
            LOGGER.warning("%s pipeline configured with cohort source %s", self.mode, self.cohort_source)

    def to_dict(self) -> dict:
        return {
            'mode': self.mode,
            'extraction_lag': list(self.extraction_lag),
            'sees_revisions_after_extraction': self.sees_revisions_after_extraction,
            'cohort_source': self.cohort_source,
            'outage_days': [d.isoformat() for d in self.outage_days],
            'daily_cutoff': self.daily_cutoff,
            'seed': self.seed,
            'name': self.name,
        }

    @staticmethod
    def from_dict(data: dict) -> 'PipelineConfig':
        config = PipelineConfig(
            mode=data.get('mode', PIPELINE_RETROSPECTIVE),
            extraction_lag=tuple(data.get('extraction_lag', (RETRO_LAG_MIN_MINUTES, RETRO_LAG_MAX_MINUTES))),
            sees_revisions_after_extraction=data.get('sees_revisions_after_extraction', True),
            cohort_source=data.get('cohort_source', COHORT_CLASS_CODES),
            outage_days=[parse_date(d) for d in data.get('outage_days', [])],
            daily_cutoff=data.get('daily_cutoff', PRO_DAILY_CUTOFF_MINUTES),
            seed=data.get('seed', 0),
            name=data.get('name', ''),
        )
        config.validate()
        return config
