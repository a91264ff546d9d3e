"""
Simulation engine: synthetic hospital truth and the paired pipeline extracts.

The truth stream of every encounter is drawn first, the outcome is drawn from
the true values, and only then is the entry trail built (late entry,
provisional values, backdating, spurious entries). Settled data therefore
equal the truth while early snapshots can see provisional data.
"""
import logging
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from ehr_model import EncounterTruth, EventRecord, RawExtract, RevisionKind, RevisionRecord
from features.taxonomy import FeatureDef, FeatureKind, FeatureTaxonomy, Persistence, default_taxonomy
from pipelines.config import PipelineConfig
from pipelines.registry import extract
from utils.constants import (
    CLASS_INPATIENT,
    CLASS_OUTPATIENT,
    COHORT_CENSUS,
    HISTORY_LOOKBACK_DAYS,
    MINUTES_PER_DAY,
    PENDING_VALUE,
    RETRO_AS_OF_DAYS_AFTER_PERIOD,
    SIM_CLASS_CODE_FLIP_DELAY_DAYS,
    SIM_CONFIG_VERSION,
    SIM_DEFAULT_ENCOUNTERS,
    SIM_DEFAULT_PREVALENCE,
    SIM_DEFAULT_SEED,
    SIM_LOS_SIGMA,
    SIM_MAX_LOS_DAYS,
    SIM_MEDIAN_LOS_DAYS,
    SIM_PRIOR_OUTCOME_RATE,
    SIM_REVISION_MAX_MINUTES,
    SIM_REVISION_MIN_MINUTES,
)
from utils.errors import ConfigError, TaxonomyError
from utils.rng import stream
from utils.statistics import sigmoid
from utils.timeline import day_index, midnight, parse_date

LOGGER = logging.getLogger(__name__)

_GROUP_MEDS_IDX = "Idx: Medications"
_GROUP_MEDS_HX = "Hx: Medications"


@dataclass
class OutcomeSpec:
    """Logistic outcome model on the true feature stream."""
    prevalence: float = SIM_DEFAULT_PREVALENCE
    intercept: Optional[float] = None   # fixed intercept; calibrated to `prevalence` when None
    n_signal_features: int = 20
    signal_scale: float = 1.0
    group_signal_boost: Dict[str, float] = field(default_factory=dict)
    period_prevalence: Dict[int, float] = field(default_factory=dict)
    weights: Dict[str, float] = field(default_factory=dict)  # explicit feature name -> weight

    def prevalence_for(self, period_index: int) -> float:
        return self.period_prevalence.get(period_index, self.prevalence)

    def to_dict(self) -> dict:
        return {
            'prevalence': self.prevalence,
            'intercept': self.intercept,
            'n_signal_features': self.n_signal_features,
            'signal_scale': self.signal_scale,
            'group_signal_boost': dict(self.group_signal_boost),
            'period_prevalence': {str(k): v for k, v in self.period_prevalence.items()},
            'weights': dict(self.weights),
        }

    @staticmethod
    def from_dict(data: dict) -> 'OutcomeSpec':
        return OutcomeSpec(
            prevalence=data.get('prevalence', SIM_DEFAULT_PREVALENCE),
            intercept=data.get('intercept'),
            n_signal_features=data.get('n_signal_features', 20),
            signal_scale=data.get('signal_scale', 1.0),
            group_signal_boost=dict(data.get('group_signal_boost', {})),
            period_prevalence={int(k): v for k, v in data.get('period_prevalence', {}).items()},
            weights=dict(data.get('weights', {})),
        )


@dataclass
class GroupNoise:
    """Entry-trail noise for the features of one group."""
    revision_rate: float = 0.0
    spurious_rate: float = 0.0
    backdate_rate: float = 0.0
    entry_lag_mean_minutes: float = 0.0
    late_entry_rate: float = 0.0

    RATE_FIELDS = ('revision_rate', 'spurious_rate', 'backdate_rate', 'late_entry_rate')

    def is_zero(self) -> bool:
        return all(getattr(self, name) == 0 for name in self.RATE_FIELDS) and self.entry_lag_mean_minutes == 0

    def to_dict(self) -> dict:
        return {
            'revision_rate': self.revision_rate,
            'spurious_rate': self.spurious_rate,
            'backdate_rate': self.backdate_rate,
            'entry_lag_mean_minutes': self.entry_lag_mean_minutes,
            'late_entry_rate': self.late_entry_rate,
        }

    @staticmethod
    def from_dict(data: dict, key_path: str = "sim.infra_noise.groups") -> 'GroupNoise':
        if not isinstance(data, dict):
            raise ConfigError("group noise must be an object", key_path)
        known = GroupNoise().to_dict()
        for key in data:
            if key not in known:
                raise ConfigError("unknown key", f"{key_path}.{key}")
        return GroupNoise(**data)


@dataclass
class InfraNoiseSpec:
    """Infrastructure noise: per-group entry trails, class-code flips, outages."""
    groups: Dict[str, GroupNoise] = field(default_factory=dict)
    class_code_flip_rate: float = 0.0
    n_outage_days: int = 0

    def to_dict(self) -> dict:
        return {
            'groups': {name: noise.to_dict() for name, noise in self.groups.items()},
            'class_code_flip_rate': self.class_code_flip_rate,
            'n_outage_days': self.n_outage_days,
        }

    @staticmethod
    def from_dict(data: dict) -> 'InfraNoiseSpec':
        return InfraNoiseSpec(
            groups={name: GroupNoise.from_dict(g, f"sim.infra_noise.groups.{name}")
                    for name, g in data.get('groups', {}).items()},
            class_code_flip_rate=data.get('class_code_flip_rate', 0.0),
            n_outage_days=data.get('n_outage_days', 0),
        )


@dataclass
class SimConfig:
    """Everything the simulator needs; a pure function of this object."""
    seed: int = SIM_DEFAULT_SEED
    n_encounters: int = SIM_DEFAULT_ENCOUNTERS
    periods: List[Tuple[date, date]] = field(default_factory=list)
    train_periods: List[int] = field(default_factory=list)
    ret_period: int = 0
    pro_period: int = 0
    taxonomy_sizes: Dict[str, int] = field(default_factory=dict)
    taxonomy_seed: int = 0
    outcome: OutcomeSpec = field(default_factory=OutcomeSpec)
    temporal_drift: Dict[int, Dict[str, float]] = field(default_factory=dict)
    infra_noise: InfraNoiseSpec = field(default_factory=InfraNoiseSpec)
    median_los_days: float = SIM_MEDIAN_LOS_DAYS
    los_sigma: float = SIM_LOS_SIGMA
    max_los_days: int = SIM_MAX_LOS_DAYS
    prior_outcome_rate: float = SIM_PRIOR_OUTCOME_RATE
    retro_as_of_days: int = RETRO_AS_OF_DAYS_AFTER_PERIOD
    retrospective: PipelineConfig = field(default_factory=PipelineConfig.retrospective)
    prospective: PipelineConfig = field(default_factory=PipelineConfig.prospective)
    version: str = SIM_CONFIG_VERSION

    # ---- presets -------------------------------------------------------

    @staticmethod
    def desk(seed: int = SIM_DEFAULT_SEED, n_encounters: int = SIM_DEFAULT_ENCOUNTERS) -> 'SimConfig':
        """
        Desk-scale study: five training years, a retrospective evaluation year
        and the prospective year that follows it. Medications and locations
        are the noisiest groups, demographics are static.
        """
        config = SimConfig(
            seed=seed,
            n_encounters=n_encounters,
            periods=[(date(year, 1, 1), date(year, 12, 31)) for year in range(2013, 2018)] + [
                (date(2019, 7, 10), date(2020, 6, 30)),
                (date(2020, 7, 10), date(2021, 6, 30)),
            ],
            train_periods=[0, 1, 2, 3, 4],
            ret_period=5,
            pro_period=6,
            outcome=OutcomeSpec(
                signal_scale=1.5,
                group_signal_boost={_GROUP_MEDS_IDX: 1.5, _GROUP_MEDS_HX: 1.5},
            ),
            temporal_drift={
                5: {_GROUP_MEDS_IDX: 1.1},
                6: {_GROUP_MEDS_IDX: 1.2, "Idx: Laboratory Results": 0.9},
            },
            infra_noise=InfraNoiseSpec(
                groups={
                    _GROUP_MEDS_IDX: GroupNoise(0.15, 0.05, 0.10, 240.0, 0.05),
                    _GROUP_MEDS_HX: GroupNoise(0.05, 0.02, 0.0, 60.0, 0.02),
                    "Idx: In-Hospital Locations": GroupNoise(0.10, 0.03, 0.05, 120.0, 0.03),
                    "Idx: Laboratory Results": GroupNoise(0.03, 0.0, 0.0, 90.0, 0.0),
                    "Idx: Vital Sign Measurements": GroupNoise(0.02, 0.0, 0.0, 30.0, 0.0),
                    "Idx: Colonization Pressure": GroupNoise(0.05, 0.0, 0.0, 60.0, 0.0),
                    "Hx: Diagnoses": GroupNoise(0.03, 0.0, 0.0, 60.0, 0.02),
                    "Idx: Admission Details": GroupNoise(0.02, 0.0, 0.0, 0.0, 0.0),
                },
                class_code_flip_rate=0.02,
                n_outage_days=10,
            ),
        )
        config.validate()
        return config

    @staticmethod
    def zero_noise(seed: int = SIM_DEFAULT_SEED, n_encounters: int = SIM_DEFAULT_ENCOUNTERS) -> 'SimConfig':
        """Desk periods without infrastructure noise; both pipelines see the same data."""
        config = SimConfig.desk(seed, n_encounters)
        config.temporal_drift = {}
        config.infra_noise = InfraNoiseSpec()
        config.retrospective = PipelineConfig.retrospective(extraction_lag=(0, 0), cohort_source=COHORT_CENSUS)
        config.prospective = PipelineConfig.prospective(extraction_lag=(0, 0))
        config.validate()
        return config

    @staticmethod
    def planted_medication_noise(seed: int = SIM_DEFAULT_SEED,
                                 n_encounters: int = SIM_DEFAULT_ENCOUNTERS,
                                 revision_rate: float = 0.2) -> 'SimConfig':
        """
        Noise only on in-hospital medications, with a common outcome that
        leans on medications; the infrastructure gap should be traced to them.
        """
        config = SimConfig.zero_noise(seed, n_encounters)
        config.outcome = OutcomeSpec(
            prevalence=0.1,
            signal_scale=1.5,
            group_signal_boost={_GROUP_MEDS_IDX: 3.0, _GROUP_MEDS_HX: 2.0},
        )
        config.infra_noise = InfraNoiseSpec(groups={
            _GROUP_MEDS_IDX: GroupNoise(revision_rate=revision_rate, spurious_rate=revision_rate / 2),
        })
        config.prospective = PipelineConfig.prospective(extraction_lag=(0, 6 * 60))
        config.validate()
        return config

    # ---- helpers -------------------------------------------------------

    def taxonomy(self) -> FeatureTaxonomy:
        return default_taxonomy(self.taxonomy_sizes, seed=self.taxonomy_seed)

    def pipeline_configs(self) -> Tuple[PipelineConfig, PipelineConfig]:
        """(retrospective, prospective) configs seeded from this config."""
        return replace(self.retrospective, seed=self.seed), replace(self.prospective, seed=self.seed)

    def retro_as_of(self, period_index: int) -> int:
        """Default retrospective extraction moment: period end plus the settling window."""
        self.check_period(period_index)
        end = self.periods[period_index][1]
        return midnight(end + timedelta(days=1 + self.retro_as_of_days))

    def check_period(self, period_index: int):
        if not 0 <= period_index < len(self.periods):
            raise ConfigError(f"period index {period_index} out of range (have {len(self.periods)})",
                              "periods")

    def validate(self):
        """Raise ConfigError for invalid counts, rates, periods or group names."""
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer", "sim.seed")
        if self.n_encounters < 0:
            raise ConfigError("encounter count must not be negative", "sim.n_encounters")
        if self.median_los_days <= 0 or self.max_los_days < 1 or self.los_sigma < 0:
            raise ConfigError("length-of-stay parameters must be positive", "sim.median_los_days")
        if self.retro_as_of_days < 0:
            raise ConfigError("settling window must not be negative", "sim.retro_as_of_days")
        self.periods = [(parse_date(start), parse_date(end)) for start, end in self.periods]
        for i, (start, end) in enumerate(self.periods):
            if end < start:
                raise ConfigError(f"period {i} ends before it starts", "sim.periods")
        ordered = sorted(self.periods)
        for (_, prev_end), (next_start, _) in zip(ordered, ordered[1:]):
            if next_start <= prev_end:
                raise ConfigError("periods overlap", "sim.periods")
        if self.periods:
            for index in list(self.train_periods) + [self.ret_period, self.pro_period]:
                self.check_period(index)

        _check_rate(self.outcome.prevalence, "sim.outcome.prevalence")
        for period, rate in self.outcome.period_prevalence.items():
            _check_rate(rate, f"sim.outcome.period_prevalence.{period}")
        if self.outcome.n_signal_features < 0:
            raise ConfigError("signal feature count must not be negative", "sim.outcome.n_signal_features")
        _check_rate(self.prior_outcome_rate, "sim.prior_outcome_rate")
        _check_rate(self.infra_noise.class_code_flip_rate, "sim.infra_noise.class_code_flip_rate")
        if self.infra_noise.n_outage_days < 0:
            raise ConfigError("outage day count must not be negative", "sim.infra_noise.n_outage_days")
        for name, noise in self.infra_noise.groups.items():
            for rate_name in GroupNoise.RATE_FIELDS:
                _check_rate(getattr(noise, rate_name), f"sim.infra_noise.groups.{name}.{rate_name}")
            if noise.entry_lag_mean_minutes < 0:
                raise ConfigError("entry lag must not be negative",
                                  f"sim.infra_noise.groups.{name}.entry_lag_mean_minutes")
        for period, shifts in self.temporal_drift.items():
            for name, multiplier in shifts.items():
                if multiplier < 0:
                    raise ConfigError("drift multipliers must not be negative",
                                      f"sim.temporal_drift.{period}.{name}")

        try:
            taxonomy = self.taxonomy()
        except TaxonomyError as e:
            raise ConfigError(str(e), "sim.taxonomy_sizes") from e
        known = set(taxonomy.groups)
        for path, names in (
            ("sim.infra_noise.groups", self.infra_noise.groups),
            ("sim.outcome.group_signal_boost", self.outcome.group_signal_boost),
            *((f"sim.temporal_drift.{p}", shifts) for p, shifts in self.temporal_drift.items()),
        ):
            for name in names:
                if name not in known:
                    raise ConfigError(f"unknown feature group {name!r}", f"{path}.{name}")
        feature_names = {f.name for f in taxonomy.features}
        for name in self.outcome.weights:
            if name not in feature_names:
                raise ConfigError(f"unknown feature {name!r}", f"sim.outcome.weights.{name}")
        self.retrospective.validate()
        self.prospective.validate()

    def to_dict(self) -> dict:
        """Serialize to a versioned JSON document."""
        return {
            'schema_version': self.version,
            'seed': self.seed,
            'n_encounters': self.n_encounters,
            'periods': [[start.isoformat(), end.isoformat()] for start, end in self.periods],
            'train_periods': list(self.train_periods),
            'ret_period': self.ret_period,
            'pro_period': self.pro_period,
            'taxonomy_sizes': dict(self.taxonomy_sizes),
            'taxonomy_seed': self.taxonomy_seed,
            'outcome': self.outcome.to_dict(),
            'temporal_drift': {str(k): dict(v) for k, v in self.temporal_drift.items()},
            'infra_noise': self.infra_noise.to_dict(),
            'median_los_days': self.median_los_days,
            'los_sigma': self.los_sigma,
            'max_los_days': self.max_los_days,
            'prior_outcome_rate': self.prior_outcome_rate,
            'retro_as_of_days': self.retro_as_of_days,
            'retrospective': self.retrospective.to_dict(),
            'prospective': self.prospective.to_dict(),
        }

    @staticmethod
    def from_dict(data: dict) -> 'SimConfig':
        """Deserialize; missing keys take the desk preset's values."""
        version = data.get('schema_version', SIM_CONFIG_VERSION)
        if version != SIM_CONFIG_VERSION:
            raise ConfigError(f"unsupported schema version {version!r}", "sim.schema_version")
        base = SimConfig.desk()
        config = SimConfig(
            seed=data.get('seed', base.seed),
            n_encounters=data.get('n_encounters', base.n_encounters),
            periods=[(parse_date(s), parse_date(e)) for s, e in data['periods']] if 'periods' in data
            else base.periods,
            train_periods=list(data.get('train_periods', base.train_periods)),
            ret_period=data.get('ret_period', base.ret_period),
            pro_period=data.get('pro_period', base.pro_period),
            taxonomy_sizes=dict(data.get('taxonomy_sizes', {})),
            taxonomy_seed=data.get('taxonomy_seed', 0),
            outcome=OutcomeSpec.from_dict(data['outcome']) if 'outcome' in data else base.outcome,
            temporal_drift={int(k): dict(v) for k, v in data['temporal_drift'].items()}
            if 'temporal_drift' in data else base.temporal_drift,
            infra_noise=InfraNoiseSpec.from_dict(data['infra_noise']) if 'infra_noise' in data
            else base.infra_noise,
            median_los_days=data.get('median_los_days', SIM_MEDIAN_LOS_DAYS),
            los_sigma=data.get('los_sigma', SIM_LOS_SIGMA),
            max_los_days=data.get('max_los_days', SIM_MAX_LOS_DAYS),
            prior_outcome_rate=data.get('prior_outcome_rate', SIM_PRIOR_OUTCOME_RATE),
            retro_as_of_days=data.get('retro_as_of_days', RETRO_AS_OF_DAYS_AFTER_PERIOD),
            retrospective=PipelineConfig.from_dict(data['retrospective']) if 'retrospective' in data
            else base.retrospective,
            prospective=PipelineConfig.from_dict(data['prospective']) if 'prospective' in data
            else base.prospective,
        )
        config.validate()
        return config


def _check_rate(value: float, key_path: str):
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"rate {value} outside [0, 1]", key_path)


@dataclass
class _TrueFact:
    """A true event before its entry trail is built."""
    feature: FeatureDef
    occurred_at: int
    value: Any


class SimulationEngine:
    """Generates truth and pipeline extracts for the periods of a SimConfig."""

    def __init__(self, config: SimConfig):
        config.validate()
        self.config = config
        self.taxonomy = config.taxonomy()
        self.weights = outcome_weights(self.taxonomy, config.outcome, config.seed)

    # ---- truth -------------------------------------------------------

    def generate_truth(self, period_index: int) -> List[EncounterTruth]:
        """Encounters admitted during a period, deterministic in (seed, period)."""
        config = self.config
        config.check_period(period_index)
        start, end = config.periods[period_index]
        n_days = (end - start).days + 1
        first_day = day_index(midnight(start))

        drift = config.temporal_drift.get(period_index, {})
        rates = np.array([
            min(1.0, f.base_rate * self.taxonomy.resolve(f.group, drift, 1.0)) for f in self.taxonomy.features
        ])

        drafts = []
        scores = np.zeros(config.n_encounters)
        for index in range(config.n_encounters):
            encounter, facts, score = self._draw_encounter(period_index, index, first_day, n_days, rates)
            drafts.append((encounter, facts))
            scores[index] = score

        intercept = self._intercept(scores, period_index)
        probabilities = sigmoid(intercept + scores) if intercept is not None else np.zeros(len(scores))

        truth = []
        for index, (encounter, facts) in enumerate(drafts):
            rng = stream(config.seed, "outcome", period_index, index)
            draw = rng.random()
            if draw < probabilities[index]:
                encounter.outcome_positive = True
                encounter.outcome_time = int(rng.integers(encounter.admit_at, encounter.discharge_at + 1))
            encounter.events = self._entry_trail(encounter, facts, period_index, index)
            encounter.validate()
            truth.append(encounter)

        n_pos = sum(t.outcome_positive for t in truth)
        LOGGER.info("period %d: %d encounters, %d positive", period_index, len(truth), n_pos,
                    extra={"stage": "simulate"})
        return truth

    def _intercept(self, scores: np.ndarray, period_index: int) -> Optional[float]:
        """Fixed intercept, or the one whose mean risk matches the period prevalence."""
        outcome = self.config.outcome
        if outcome.intercept is not None:
            return float(outcome.intercept)
        prevalence = outcome.prevalence_for(period_index)
        if prevalence <= 0.0 or len(scores) == 0:
            return None
        if prevalence >= 1.0:
            return float("inf")
        return float(brentq(lambda b: float(np.mean(sigmoid(b + scores))) - prevalence, -60.0, 60.0))

    def _draw_encounter(self, period_index: int, index: int, first_day: int, n_days: int,
                        rates: np.ndarray) -> Tuple[EncounterTruth, List[_TrueFact], float]:
        config = self.config
        rng = stream(config.seed, "encounter", period_index, index)
        encounter_id = f"E{period_index}-{index:05d}"

        admit_at = midnight(first_day + int(rng.integers(0, n_days))) + int(rng.integers(0, MINUTES_PER_DAY))
        los_days = min(float(config.max_los_days),
                       float(rng.lognormal(np.log(config.median_los_days), config.los_sigma)))
        discharge_at = admit_at + max(60, int(los_days * MINUTES_PER_DAY))

        prior_outcome_time = None
        if rng.random() < config.prior_outcome_rate:
            prior_outcome_time = admit_at - int(rng.uniform(1, 400) * MINUTES_PER_DAY)

        history = [(admit_at, CLASS_INPATIENT)]
        if rng.random() < config.infra_noise.class_code_flip_rate:
            history.append((discharge_at + SIM_CLASS_CODE_FLIP_DELAY_DAYS * MINUTES_PER_DAY, CLASS_OUTPATIENT))

        facts: List[_TrueFact] = []
        static = [f for f in self.taxonomy.features if f.persistence == Persistence.STATIC]
        for feature in static:
            if feature.derived == "history_of_outcome":
                recent = prior_outcome_time is not None and \
                    admit_at - prior_outcome_time <= HISTORY_LOOKBACK_DAYS * MINUTES_PER_DAY
                if recent:
                    facts.append(_TrueFact(feature, admit_at, feature.categories[0]))
                continue
            if rng.random() < rates[feature.feature_id]:
                facts.append(_TrueFact(feature, admit_at, _draw_value(feature, rng)))

        daily = [f for f in self.taxonomy.features if f.persistence == Persistence.DAILY]
        first, last = day_index(admit_at), day_index(discharge_at)
        daily_rates = np.array([rates[f.feature_id] for f in daily])
        hits = rng.random((last - first + 1, len(daily))) < daily_rates
        units = [f for f in daily if f.derived is None and f.group == "Idx: In-Hospital Locations"]
        high_burden = {f.feature_id for f in units[: max(1, len(units) // 3)]} if units else set()
        for offset, day in enumerate(range(first, last + 1)):
            lo = max(admit_at, midnight(day))
            hi = min(discharge_at, midnight(day + 1) - 1)
            in_burden_unit = 0
            for column in np.flatnonzero(hits[offset]):
                feature = daily[column]
                occurred_at = int(rng.integers(lo, hi + 1))
                value = _draw_value(feature, rng)
                if feature.feature_id in high_burden:
                    in_burden_unit += 1
                if feature.derived == "location_pressure":
                    value = round(float(value) + feature.sd * in_burden_unit, feature.decimals)
                facts.append(_TrueFact(feature, occurred_at, value))

        demographics = {
            fact.feature.name: fact.value for fact in facts if fact.feature.group.startswith("Demographics")
        }
        encounter = EncounterTruth(
            encounter_id=encounter_id,
            patient_id=f"P{period_index}-{index:05d}",
            admit_at=admit_at,
            discharge_at=discharge_at,
            true_class_code_history=history,
            census_intervals=[(admit_at, discharge_at)],
            demographics=demographics,
            prior_outcome_time=prior_outcome_time,
            period_index=period_index,
        )
        return encounter, facts, self._linear_score(facts)

    def _linear_score(self, facts: Sequence[_TrueFact]) -> float:
        """Outcome score from true values: indicator per feature, mean z for numerics."""
        signal: Dict[int, List[float]] = {}
        for fact in facts:
            feature = fact.feature
            if self.weights[feature.feature_id] == 0.0:
                continue
            if feature.kind == FeatureKind.NUMERIC:
                z = (float(fact.value) - feature.mean) / feature.sd if feature.sd > 0 else 0.0
                signal.setdefault(feature.feature_id, []).append(z)
            else:
                signal.setdefault(feature.feature_id, []).append(1.0 if fact.value == feature.categories[0] else 0.0)
        total = 0.0
        for feature_id, values in signal.items():
            feature = self.taxonomy.feature(feature_id)
            value = float(np.mean(values)) if feature.kind == FeatureKind.NUMERIC else max(values)
            total += self.weights[feature_id] * value
        return total

    def _entry_trail(self, encounter: EncounterTruth, facts: Sequence[_TrueFact],
                     period_index: int, index: int) -> List[EventRecord]:
        """Turn true facts into entered events with late entry, revisions and spurious entries."""
        rng = stream(self.config.seed, "entry", period_index, index)
        groups = self.config.infra_noise.groups
        events = []
        for fact in facts:
            feature = fact.feature
            noise: GroupNoise = self.taxonomy.resolve(feature.group, groups, None) or GroupNoise()
            carry = feature.persistence == Persistence.STATIC
            if noise.is_zero():
                events.append(EventRecord(encounter.encounter_id, feature.feature_id, fact.occurred_at,
                                          fact.occurred_at, fact.value, carry_forward=carry))
                continue

            lag = 0
            if noise.entry_lag_mean_minutes > 0:
                lag += int(rng.exponential(noise.entry_lag_mean_minutes))
            if rng.random() < noise.late_entry_rate:
                lag += int(rng.uniform(1, 3) * MINUTES_PER_DAY)
            occurred_at = fact.occurred_at
            entered_at = occurred_at + lag
            value = fact.value
            revisions = []
            revised_at = entered_at + int(rng.integers(SIM_REVISION_MIN_MINUTES, SIM_REVISION_MAX_MINUTES + 1))
            if rng.random() < noise.revision_rate:
                value = _provisional_value(feature, fact.value, rng)
                revisions.append(RevisionRecord(revised_at, fact.value, RevisionKind.UPDATE))
            elif rng.random() < noise.backdate_rate:
                occurred_at = fact.occurred_at + int(rng.uniform(0.5, 1.5) * MINUTES_PER_DAY)
                entered_at = max(entered_at, occurred_at)
                revised_at = max(revised_at, entered_at + SIM_REVISION_MIN_MINUTES)
                revisions.append(RevisionRecord(revised_at, fact.value, RevisionKind.BACKDATE,
                                                new_occurred_at=fact.occurred_at))
            events.append(EventRecord(encounter.encounter_id, feature.feature_id, occurred_at, entered_at,
                                      value, revisions, carry_forward=carry))

            if rng.random() < noise.spurious_rate:
                siblings = self.taxonomy.features_in(feature.group)
                ghost = siblings[int(rng.integers(0, len(siblings)))]
                ghost_entered = fact.occurred_at + lag
                cancelled_at = ghost_entered + int(rng.integers(SIM_REVISION_MIN_MINUTES,
                                                                SIM_REVISION_MAX_MINUTES + 1))
                events.append(EventRecord(
                    encounter.encounter_id, ghost.feature_id, fact.occurred_at, ghost_entered,
                    _draw_value(ghost, rng), [RevisionRecord(cancelled_at, None, RevisionKind.CANCEL)],
                    carry_forward=ghost.persistence == Persistence.STATIC,
                ))
        return events

    # ---- extracts ------------------------------------------------------

    def draw_outage_days(self, period_index: int, n: int) -> List[date]:
        """Sorted sample of `n` distinct dates inside a period."""
        self.config.check_period(period_index)
        start, end = self.config.periods[period_index]
        n_days = (end - start).days + 1
        if n <= 0:
            return []
        rng = stream(self.config.seed, "outage", period_index)
        offsets = rng.choice(n_days, size=min(n, n_days), replace=False)
        return sorted(start + timedelta(days=int(o)) for o in offsets)

    def prospective_config(self, period_index: int) -> PipelineConfig:
        """Prospective config with the configured plus drawn outage days."""
        _, prospective = self.config.pipeline_configs()
        drawn = self.draw_outage_days(period_index, self.config.infra_noise.n_outage_days)
        outages = sorted(set(prospective.outage_days) | set(drawn))
        return replace(prospective, outage_days=outages)

    def build_retrospective_period(self, period_index: int,
                                   truth: Optional[List[EncounterTruth]] = None) -> RawExtract:
        """Retrospective extract of a period with its own cohort (training data, D_ret)."""
        truth = self.generate_truth(period_index) if truth is None else truth
        retrospective, _ = self.config.pipeline_configs()
        return extract(truth, retrospective, self.config.retro_as_of(period_index))

    def build_paired_period(self, period_index: int,
                            truth: Optional[List[EncounterTruth]] = None) -> Tuple[RawExtract, RawExtract]:
        """
        (D_pro, D_ret') for one period: the prospective extract and the
        retrospective re-extraction of exactly the D_pro encounters.
        """
        truth = self.generate_truth(period_index) if truth is None else truth
        retrospective, _ = self.config.pipeline_configs()
        as_of = self.config.retro_as_of(period_index)
        d_pro = extract(truth, self.prospective_config(period_index), as_of)
        d_ret_prime = extract(truth, retrospective, as_of, encounter_ids=d_pro.encounter_ids())
        LOGGER.info("period %d: D_pro %d rows, D_ret' %d rows over %d encounters",
                    period_index, len(d_pro), len(d_ret_prime), len(d_pro.encounters),
                    extra={"stage": "simulate"})
        return d_pro, d_ret_prime


def outcome_weights(taxonomy: FeatureTaxonomy, outcome: OutcomeSpec, seed: int) -> np.ndarray:
    """
    Sparse true weights over raw features. Explicit weights win; otherwise
    `n_signal_features` features are picked with probability proportional to
    their group boost and given boosted magnitudes, mostly positive.
    """
    weights = np.zeros(len(taxonomy.features))
    if outcome.weights:
        by_name = {f.name: f.feature_id for f in taxonomy.features}
        for name, weight in outcome.weights.items():
            weights[by_name[name]] = weight
        return weights

    eligible = np.array([f.base_rate > 0 or f.derived is not None for f in taxonomy.features], dtype=float)
    boost = np.array([
        float(taxonomy.resolve(f.group, outcome.group_signal_boost, 1.0)) for f in taxonomy.features
    ])
    mass = eligible * boost
    k = int(min(outcome.n_signal_features, np.count_nonzero(mass)))
    if k == 0:
        return weights
    rng = stream(seed, "outcome_weights")
    chosen = rng.choice(len(weights), size=k, replace=False, p=mass / mass.sum())
    signs = rng.choice([1.0, -1.0], size=k, p=[0.75, 0.25])
    weights[chosen] = outcome.signal_scale * boost[chosen] * rng.uniform(0.5, 1.5, size=k) * signs
    return weights


def _draw_value(feature: FeatureDef, rng: np.random.Generator) -> Any:
    if feature.kind == FeatureKind.NUMERIC:
        value = float(rng.normal(feature.mean, feature.sd))
        if feature.lower is not None:
            value = max(feature.lower, value)
        value = round(value, feature.decimals)
        return int(value) if feature.decimals == 0 else value
    if len(feature.categories) == 1:
        return feature.categories[0]
    return feature.categories[int(rng.choice(len(feature.categories), p=feature.category_weights))]


def _provisional_value(feature: FeatureDef, true_value: Any, rng: np.random.Generator) -> Any:
    """A wrong first entry that a later update corrects."""
    if feature.kind == FeatureKind.NUMERIC:
        value = round(float(true_value) + float(rng.normal(0.0, feature.sd)), feature.decimals)
        return int(value) if feature.decimals == 0 else value
    if feature.is_indicator:
        return PENDING_VALUE
    others = [c for c in feature.categories if c != true_value]
    return others[int(rng.integers(0, len(others)))]


# Module-level entry points

def generate_truth(config: SimConfig, period_index: int) -> List[EncounterTruth]:
    """Ground-truth encounters of one period."""
    return SimulationEngine(config).generate_truth(period_index)


def build_paired_period(config: SimConfig, period_index: int) -> Tuple[RawExtract, RawExtract]:
    """(D_pro_raw, D_ret_prime_raw) for one period."""
    return SimulationEngine(config).build_paired_period(period_index)


def draw_outage_days(config: SimConfig, period_index: int, n: int) -> List[date]:
    """Deterministic outage dates inside a period."""
    return SimulationEngine(config).draw_outage_days(period_index, n)
