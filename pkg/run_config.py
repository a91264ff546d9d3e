"""
Run configuration: one JSON document drives every CLI stage.

Precedence: built-in defaults < config file < --set overrides < --output-dir.
"""
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from analysis.registry import MetricRegistry
from risk_model import OPTIMIZER_LBFGS, TrainConfig
from simulation_engine import SimConfig
from utils.constants import (
    BOOTSTRAP_REPLICATES, CI_LEVEL, DEFAULT_MIN_ENCOUNTERS, DEFAULT_OUTPUT_DIR, DISCORDANCE_THRESHOLD,
    DRIFT_ALPHA, OUTPUT_DIR_ENV, RUN_CONFIG_VERSION, SIM_DEFAULT_ENCOUNTERS, SIM_DEFAULT_SEED,
    THRESHOLD_PERCENTILE,
)
from utils.errors import ConfigError, MissingInputError

LOGGER = logging.getLogger(__name__)

PRESETS = {
    'desk': SimConfig.desk,
    'zero_noise': SimConfig.zero_noise,
    'planted_medication_noise': SimConfig.planted_medication_noise,
}

# SimConfig keys whose values are free-form name -> value maps
_OPEN_SIM_MAPS = {
    "sim.taxonomy_sizes", "sim.temporal_drift", "sim.outcome.group_signal_boost",
    "sim.outcome.period_prevalence", "sim.outcome.weights", "sim.infra_noise.groups",
}


@dataclass
class FeaturizeSection:
    min_encounters: int = DEFAULT_MIN_ENCOUNTERS
    include_missing_bin: bool = True
    score_post_outcome_days: bool = False

    def validate(self):
        if self.min_encounters < 0:
            raise ConfigError("must not be negative", "featurize.min_encounters")


@dataclass
class EvaluateSection:
    metrics: List[str] = field(default_factory=lambda: ["auroc", "brier"])
    n_replicates: int = BOOTSTRAP_REPLICATES
    ci_level: float = CI_LEVEL
    threshold_percentile: float = THRESHOLD_PERCENTILE
    monthly: bool = True

    def validate(self):
        _check_metrics(self.metrics, "evaluate.metrics")
        _check_bootstrap(self.n_replicates, self.ci_level, "evaluate")
        if not 0.0 <= self.threshold_percentile <= 100.0:
            raise ConfigError("must lie in [0, 100]", "evaluate.threshold_percentile")


@dataclass
class GapSection:
    metrics: List[str] = field(default_factory=lambda: ["auroc", "brier"])
    n_replicates: int = BOOTSTRAP_REPLICATES
    ci_level: float = CI_LEVEL
    discordance_threshold: float = DISCORDANCE_THRESHOLD

    def validate(self):
        _check_metrics(self.metrics, "gap.metrics")
        _check_bootstrap(self.n_replicates, self.ci_level, "gap")
        if not 0.0 <= self.discordance_threshold <= 1.0:
            raise ConfigError("must lie in [0, 1]", "gap.discordance_threshold")


@dataclass
class SwapSection:
    window: str = "full"

    def validate(self):
        if self.window not in ("full", "first_half"):
            raise ConfigError(f"unknown window {self.window!r} (full or first_half)", "swap.window")


@dataclass
class DriftSection:
    alpha: float = DRIFT_ALPHA

    def validate(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("must lie in (0, 1)", "drift.alpha")


_SECTIONS = {
    'featurize': FeaturizeSection,
    'evaluate': EvaluateSection,
    'gap': GapSection,
    'swap': SwapSection,
    'drift': DriftSection,
}


@dataclass
class RunConfig:
    """Every setting of an end-to-end run. `sim` holds overrides on top of `preset`."""
    seed: int = SIM_DEFAULT_SEED
    output_dir: Optional[str] = None
    preset: str = "desk"
    n_encounters: int = SIM_DEFAULT_ENCOUNTERS
    sim: Dict[str, Any] = field(default_factory=dict)
    featurize: FeaturizeSection = field(default_factory=FeaturizeSection)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(optimizer=OPTIMIZER_LBFGS))
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    gap: GapSection = field(default_factory=GapSection)
    swap: SwapSection = field(default_factory=SwapSection)
    drift: DriftSection = field(default_factory=DriftSection)
    schema_version: str = RUN_CONFIG_VERSION

    def validate(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer", "seed")
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r} ({', '.join(PRESETS)})", "preset")
        for name in _SECTIONS:
            getattr(self, name).validate()
        self.train.validate()
        self.sim_config()

    def sim_config(self) -> SimConfig:
        """Preset merged with the `sim` overrides; the run seed wins over any sim seed."""
        base = PRESETS[self.preset](seed=self.seed, n_encounters=self.n_encounters).to_dict()
        _check_keys(self.sim, base, "sim")
        merged = _deep_merge(base, self.sim)
        merged['seed'] = self.seed
        if 'n_encounters' not in self.sim:
            merged['n_encounters'] = self.n_encounters
        return SimConfig.from_dict(merged)

    def train_config(self) -> TrainConfig:
        config = TrainConfig.from_dict(self.train.to_dict())
        config.seed = self.seed
        return config

    def resolved_output_dir(self) -> Path:
        return Path(self.output_dir or os.environ.get(OUTPUT_DIR_ENV) or DEFAULT_OUTPUT_DIR)

    # ---- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        data = {
            'schema_version': self.schema_version,
            'seed': self.seed,
            'output_dir': self.output_dir,
            'preset': self.preset,
            'n_encounters': self.n_encounters,
            'sim': self.sim,
            'train': self.train.to_dict(),
        }
        for name in _SECTIONS:
            section = getattr(self, name)
            data[name] = {f.name: getattr(section, f.name) for f in fields(section)}
        return data

    @staticmethod
    def from_dict(data: dict) -> 'RunConfig':
        """
        Strict load: unknown keys and schema version mismatches raise
        ConfigError with the dotted key path.
        """
        if not isinstance(data, dict):
            raise ConfigError("run configuration must be a JSON object")
        version = data.get('schema_version', RUN_CONFIG_VERSION)
        if version != RUN_CONFIG_VERSION:
            raise ConfigError(f"unsupported schema version {version!r}, expected {RUN_CONFIG_VERSION}",
                              "schema_version")
        _check_keys(data, RunConfig().to_dict(), "")

        config = RunConfig()
        for key in ('seed', 'output_dir', 'preset', 'n_encounters'):
            if key in data:
                setattr(config, key, data[key])
        config.sim = dict(data.get('sim') or {})
        for name, section_type in _SECTIONS.items():
            if name in data:
                setattr(config, name, _build_section(section_type, data[name], name))
        if 'train' in data:
            train = RunConfig().train.to_dict()
            train.update(data['train'])
            try:
                config.train = TrainConfig(**train)
            except TypeError as e:
                raise ConfigError(str(e), "train") from e
        config.validate()
        return config

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form, independent of the output directory."""
        data = self.to_dict()
        data.pop('output_dir')
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_run_config(path: Optional[str] = None, overrides: Sequence[str] = (),
                    output_dir: Optional[str] = None) -> RunConfig:
    """
    Build a RunConfig from defaults, an optional JSON file, `key=value`
    overrides and an explicit output directory, in that order.

    Raises:
        MissingInputError: the config file does not exist.
        ConfigError: invalid JSON, unknown keys or invalid values.
    """
    data: Dict[str, Any] = {}
    if path is not None:
        if not Path(path).exists():
            raise MissingInputError(path)
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON at line {e.lineno}: {e.msg}", str(path)) from e
    for item in overrides:
        key, value = parse_override(item)
        _set_path(data, key, value)
    if output_dir is not None:
        data['output_dir'] = output_dir
    config = RunConfig.from_dict(data)
    LOGGER.info("run config %s (preset %s, seed %d)", config.config_hash()[:12], config.preset, config.seed,
                extra={"stage": "config"})
    return config


def parse_override(item: str):
    """`a.b=value`; the value is parsed as JSON when possible, else kept as text."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {item!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _set_path(data: dict, key: str, value: Any):
    parts = key.split(".")
    node = data
    for i, part in enumerate(parts[:-1]):
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError("cannot set a key below a non-object value", ".".join(parts[:i + 1]))
        node = child
    node[parts[-1]] = value


def _check_keys(data: dict, template: dict, path: str):
    for key, value in data.items():
        key_path = f"{path}.{key}" if path else str(key)
        if key not in template:
            raise ConfigError("unknown key", key_path)
        if key_path in _OPEN_SIM_MAPS:
            continue
        if isinstance(value, dict) and isinstance(template[key], dict) and key_path != "sim":
            _check_keys(value, template[key], key_path)


def _deep_merge(base: dict, overrides: dict) -> dict:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _build_section(section_type, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError("section must be an object", path)
    return section_type(**data)


def _check_metrics(names: Sequence[str], path: str):
    if not names:
        raise ConfigError("at least one metric is required", path)
    for name in names:
        if name not in MetricRegistry.get_all_names():
            raise ConfigError(f"unknown metric {name!r}", path)


def _check_bootstrap(n_replicates: int, ci_level: float, section: str):
    if n_replicates < 0:
        raise ConfigError("must not be negative", f"{section}.n_replicates")
    if not 0.0 < ci_level < 1.0:
        raise ConfigError("must lie in (0, 1)", f"{section}.ci_level")
