"""
Main entry point for the shift laboratory command line.

    python main.py <command> [--config run.json] [--set key=value ...]
                   [--output-dir DIR] [--log-level LEVEL]

Exit status: 0 ok, 2 invalid configuration, 3 missing input file,
4 invalid data, 1 any other failure.
"""
import argparse
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd

from analysis.bootstrap import bootstrap_ci, undefined_ci
from analysis.drift import temporal_drift_test
from analysis.gap import gap_bootstrap
from analysis.metrics import ScoreSet, confusion_at, percentile_threshold, roc_points
from analysis.monthly import MONTH_KEY, compare_monthly, monthly_difference_test, monthly_metric
from analysis.registry import MetricRegistry
from analysis.sources import (
    feature_discrepancy, feature_swap_table, first_half_window, outage_days_per_encounter, score_concordance,
)
from ehr_model import RawExtract
from features.encoding import build_feature_matrix, fit_feature_specs, prune_rare
from features.inclusion import InclusionResult, apply_inclusion, summarize_cohort
from file_handler import FileHandler, mark_undefined
from risk_model import max_scores_by_encounter, score_matrix, train
from run_config import RunConfig, load_run_config
from simulation_engine import SimulationEngine
from utils.constants import (
    DAILY_SCORES_NAME, DATASET_PRO, DATASET_RET, DATASET_RET_PRIME, EXTRACT_EXTENSION, TOOL_VERSION,
    TRAIN_PREFIX,
)
from utils.errors import ConfigError, DataError, MissingInputError, SchemaError, UndefinedMetricError
from utils.log import setup_logging

LOGGER = logging.getLogger(__name__)

COMMANDS = ["simulate", "featurize", "train", "score", "evaluate", "gap", "swap", "drift", "report"]
EVALUATION_SETS = [TRAIN_PREFIX, DATASET_RET, DATASET_RET_PRIME, DATASET_PRO]

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_DATA = 4

# Small report tables carried into bundle.json
BUNDLE_TABLES = ["metrics", "gap", "concordance", "discrepancy_groups", "swap", "drift_groups",
                 "monthly_comparison", "cohort"]


class LabRunner:
    """Runs the stages of one configuration against one output directory."""

    def __init__(self, config: RunConfig, config_path: Optional[str] = None):
        self.config = config
        self.sim = config.sim_config()
        self.output_dir = config.resolved_output_dir()
        self.inputs: List[str] = [str(config_path)] if config_path else []

    # ---- layout --------------------------------------------------------

    def path(self, *parts: str) -> Path:
        return self.output_dir.joinpath(*parts)

    def extract_path(self, name: str) -> Path:
        return self.path("raw", name + EXTRACT_EXTENSION)

    def dataset_stem(self, name: str) -> Path:
        return self.path("features", name)

    def report_path(self, name: str) -> Path:
        return self.path("reports", name + ".csv")

    def train_extract_names(self) -> List[str]:
        return [f"{TRAIN_PREFIX}_{p}" for p in self.sim.train_periods]

    def _used(self, path: Path) -> Path:
        relative = path.relative_to(self.output_dir).as_posix() if path.is_relative_to(self.output_dir) \
            else str(path)
        if relative not in self.inputs:
            self.inputs.append(relative)
        return path

    def load_extract(self, name: str) -> RawExtract:
        return FileHandler.load_extract(self._used(self.extract_path(name)))

    def load_matrix(self, name: str):
        stem = self.dataset_stem(name)
        for path in FileHandler.dataset_paths(stem).values():
            self._used(path)
        return FileHandler.load_dataset(stem)

    def load_scores(self, name: str) -> ScoreSet:
        return FileHandler.load_score_set(self._used(self.path("scores", name + ".csv")))

    def load_taxonomy(self):
        return FileHandler.load_taxonomy(self._used(self.path("raw", "taxonomy.json")))

    def save_report(self, name: str, table: pd.DataFrame):
        FileHandler.save_table(table, self.report_path(name))

    def threshold(self) -> float:
        """Decision threshold: percentile of the training encounters' max scores."""
        return percentile_threshold(self.load_scores(TRAIN_PREFIX), self.config.evaluate.threshold_percentile)

    # ---- stages --------------------------------------------------------

    def simulate(self):
        """Truth and extracts: training years, D_ret, and the paired D_pro / D_ret'."""
        engine = SimulationEngine(self.sim)
        FileHandler.save_json(self.sim.to_dict(), self.path("raw", "sim_config.json"))
        FileHandler.save_taxonomy(engine.taxonomy, self.path("raw", "taxonomy.json"))
        for name, period in zip(self.train_extract_names(), self.sim.train_periods):
            FileHandler.save_extract(engine.build_retrospective_period(period), self.extract_path(name))
        FileHandler.save_extract(engine.build_retrospective_period(self.sim.ret_period),
                                 self.extract_path(DATASET_RET))
        d_pro, d_ret_prime = engine.build_paired_period(self.sim.pro_period)
        FileHandler.save_extract(d_pro, self.extract_path(DATASET_PRO))
        FileHandler.save_extract(d_ret_prime, self.extract_path(DATASET_RET_PRIME))

    def featurize(self):
        """Inclusion, encoder fitting on training years, pruning and matrices for every dataset."""
        options = self.config.featurize
        taxonomy = self.load_taxonomy()
        included: Dict[str, InclusionResult] = {}
        for name in self.train_extract_names() + [DATASET_RET, DATASET_PRO, DATASET_RET_PRIME]:
            included[name] = apply_inclusion(self.load_extract(name), options.score_post_outcome_days)

        training = [included[name] for name in self.train_extract_names()]
        spec_set = fit_feature_specs([r.extract for r in training], taxonomy, options.include_missing_bin)
        merged = _merge_included(training)
        train_matrix, _ = build_feature_matrix(merged.extract, merged.labels, spec_set)
        retained = prune_rare(train_matrix, options.min_encounters)
        spec_set = spec_set.with_retained(retained)
        LOGGER.info("retained %d of %d columns", len(retained), spec_set.full_width, extra={"stage": "featurize"})
        FileHandler.save_feature_specs(spec_set, self.path("features", "specs.json"))
        FileHandler.save_dataset(train_matrix.select_columns(retained), self.dataset_stem(TRAIN_PREFIX))

        cohorts = [_cohort_table(TRAIN_PREFIX, merged)]
        for name in (DATASET_RET, DATASET_PRO, DATASET_RET_PRIME):
            matrix, report = build_feature_matrix(included[name].extract, included[name].labels, spec_set)
            FileHandler.save_dataset(matrix, self.dataset_stem(name))
            cohorts.append(_cohort_table(name, included[name]))
            if report.n_unseen:
                LOGGER.info("%s: %d unseen values", name, report.n_unseen, extra={"stage": "featurize"})
        self.save_report("cohort", pd.concat(cohorts, ignore_index=True))

    def train(self):
        """Fit the multitask model on the training matrix."""
        matrix = self.load_matrix(TRAIN_PREFIX)
        model = train(matrix, self.config.train_config())
        model.metadata['config_hash'] = self.config.config_hash()
        FileHandler.save_model(model, self.path("model", "model.json"))
        if 'cv' in model.metadata:
            self.save_report("cv", pd.DataFrame.from_records(model.metadata['cv']))

    def score(self):
        """Daily scores for every dataset, collapsed to encounter max scores."""
        model = FileHandler.load_model(self._used(self.path("model", "model.json")))
        # one score stage owns the whole daily log
        self.path("scores", DAILY_SCORES_NAME).unlink(missing_ok=True)
        for name in EVALUATION_SETS:
            matrix = self.load_matrix(name)
            daily = score_matrix(model, matrix)
            per_encounter = max_scores_by_encounter(matrix, daily)
            LOGGER.info("%s: scored %d days of %d encounters", name, matrix.n_rows, len(per_encounter),
                        extra={"stage": "score"})
            FileHandler.save_score_set(ScoreSet.from_daily(matrix.rows, daily), self.path("scores", name + ".csv"))
            if name == DATASET_PRO:
                FileHandler.persist_daily_scores(matrix, daily, self.path("scores", DAILY_SCORES_NAME))

    def evaluate(self):
        """Metrics with CIs, confusion at the training threshold, ROC points and monthly tables."""
        options = self.config.evaluate
        seed = self.config.seed
        threshold = self.threshold()
        score_sets = {name: self.load_scores(name) for name in EVALUATION_SETS}

        metric_rows, confusion_rows, roc_tables = [], [], []
        for name, scores in score_sets.items():
            for metric in options.metrics:
                try:
                    ci = bootstrap_ci(scores, metric, options.n_replicates, seed, options.ci_level,
                                      threshold=threshold, keys=(name, metric))
                except UndefinedMetricError as e:
                    LOGGER.warning("%s on %s undefined: %s", metric, name, e, extra={"stage": "evaluate"})
                    ci = undefined_ci(scores, metric, options.n_replicates)
                metric_rows.append({"period": name, **ci.to_dict()})
            confusion_rows.append({"period": name, **confusion_at(scores, threshold).to_dict()})
            try:
                roc_tables.append(roc_points(scores).assign(period=name))
            except UndefinedMetricError:
                LOGGER.warning("no ROC curve for %s", name, extra={"stage": "evaluate"})
        columns = ["metric", "period", "point", "lower", "upper", "n", "n_pos", "n_replicates", "n_redraws"]
        self.save_report("metrics", pd.DataFrame.from_records(metric_rows)[columns])
        self.save_report("confusion", pd.DataFrame.from_records(confusion_rows))
        if roc_tables:
            roc = pd.concat(roc_tables, ignore_index=True)
            self.save_report("roc", roc[["period", "fpr", "tpr", "threshold"]])

        if not options.monthly:
            return
        monthly, comparisons = [], []
        ret, pro = score_sets[DATASET_RET], score_sets[DATASET_PRO]
        for metric in options.metrics:
            tables = {}
            for name in (DATASET_RET, DATASET_RET_PRIME, DATASET_PRO):
                tables[name] = monthly_metric(score_sets[name], metric, options.n_replicates, seed, threshold)
                monthly.append(tables[name].assign(period=name))
            joined = compare_monthly(tables[DATASET_RET], tables[DATASET_PRO])
            test = monthly_difference_test(ret, pro, metric, options.n_replicates, seed, options.ci_level,
                                           threshold)
            keep = MONTH_KEY + ["diff", "diff_lower", "diff_upper", "ci_overlap", "bootstrap_diff"]
            comparisons.append(joined.merge(test[keep], on=MONTH_KEY, how="left").assign(metric=metric))
        self.save_report("monthly", pd.concat(monthly, ignore_index=True))
        self.save_report("monthly_comparison", pd.concat(comparisons, ignore_index=True))

    def gap(self):
        """Gap decomposition, score concordance and feature discrepancy."""
        options = self.config.gap
        ret = self.load_scores(DATASET_RET)
        ret_prime = self.load_scores(DATASET_RET_PRIME)
        pro = self.load_scores(DATASET_PRO)
        needs_threshold = any(MetricRegistry.get(m).needs_threshold for m in options.metrics)
        threshold = self.threshold() if needs_threshold else None
        reports = [
            gap_bootstrap(ret, ret_prime, pro, metric, options.n_replicates, self.config.seed, options.ci_level,
                          threshold).to_frame()
            for metric in options.metrics
        ]
        self.save_report("gap", pd.concat(reports, ignore_index=True))

        d_pro = self.load_extract(DATASET_PRO)
        outages = outage_days_per_encounter(d_pro.encounters, d_pro.outage_days)
        concordance = score_concordance(_score_series(ret_prime), _score_series(pro),
                                        options.discordance_threshold, outages)
        self.save_report("concordance", concordance.summary())
        self.save_report("concordance_pairs", concordance.pairs.sort_values(
            ["abs_diff", "encounter_id"], ascending=[False, True], kind="mergesort"))

        discrepancy = feature_discrepancy(self.load_matrix(DATASET_PRO), self.load_matrix(DATASET_RET_PRIME),
                                          taxonomy=self.load_taxonomy())
        self.save_report("discrepancy", discrepancy.rates)
        self.save_report("discrepancy_hist", discrepancy.histogram)
        self.save_report("discrepancy_groups", discrepancy.groups)

    def swap(self):
        """Feature-group swap from D_ret' into D_pro for every group."""
        model = FileHandler.load_model(self._used(self.path("model", "model.json")))
        pro = self.load_matrix(DATASET_PRO)
        ret_prime = self.load_matrix(DATASET_RET_PRIME)
        window = first_half_window(pro) if self.config.swap.window == "first_half" else None
        table = feature_swap_table(pro, ret_prime, model, self.load_taxonomy(), window)
        self.save_report("swap", table)

    def drift(self):
        """Feature prevalence drift between D_ret and D_ret'."""
        report = temporal_drift_test(self.load_matrix(DATASET_RET), self.load_matrix(DATASET_RET_PRIME),
                                     self.config.drift.alpha, self.config.seed, self.load_taxonomy())
        self.save_report("drift", report.table)
        self.save_report("drift_groups", report.groups)

    def report(self):
        """bundle.json: run identity plus the small report tables."""
        tables = {}
        for name in BUNDLE_TABLES:
            path = self.report_path(name)
            if path.exists():
                tables[name] = FileHandler.load_table(self._used(path)).to_dict(orient="records")
        if not tables:
            raise MissingInputError(self.report_path("metrics"))
        files = sorted(p.name for p in self.path("reports").glob("*.csv"))
        bundle = {
            'tool_version': TOOL_VERSION,
            'config_hash': self.config.config_hash(),
            'seed': self.config.seed,
            'preset': self.config.preset,
            'report_files': files,
            'tables': mark_undefined(tables),
        }
        FileHandler.save_json(bundle, self.path("reports", "bundle.json"))

    # ---- orchestration -------------------------------------------------

    def run(self, command: str):
        """Run one command ('all' runs every stage in order) and write the manifest."""
        started_at = datetime.now(timezone.utc)
        stages = COMMANDS if command == "all" else [command]
        for stage in stages:
            LOGGER.info("running %s", stage, extra={"stage": stage})
            getattr(self, stage)()
        FileHandler.write_manifest(self.output_dir, command, self.config.config_hash(), self.config.seed,
                                   self.inputs, started_at)
        LOGGER.info("%s finished; outputs in %s", command, self.output_dir, extra={"stage": command})


def _merge_included(results: Sequence[InclusionResult]) -> InclusionResult:
    """One training set from the included extracts of several years."""
    merged = RawExtract(mode=results[0].extract.mode if results else "retrospective")
    labels, excluded = {}, {}
    for result in results:
        merged.rows.extend(result.extract.rows)
        merged.encounters.update(result.extract.encounters)
        labels.update(result.labels)
        excluded.update(result.excluded)
    return InclusionResult(merged, labels, excluded)


def _cohort_table(name: str, result: InclusionResult) -> pd.DataFrame:
    table = summarize_cohort(result.extract, result.labels)
    exclusions = pd.DataFrame(
        [(f"excluded_{reason}", str(count)) for reason, count in sorted(result.exclusion_counts().items())],
        columns=["characteristic", "value"],
    )
    return pd.concat([table, exclusions], ignore_index=True).assign(period=name)[["period", "characteristic",
                                                                                 "value"]]


def _score_series(scores: ScoreSet) -> pd.Series:
    return pd.Series(scores.scores, index=pd.Index(scores.encounter_ids, name="encounter_id"))


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, MissingInputError):
        return EXIT_MISSING_INPUT
    if isinstance(error, (DataError, SchemaError)):
        return EXIT_DATA
    return EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shiftlab", description="Dataset-shift laboratory for EHR risk models")
    parser.add_argument("command", choices=COMMANDS + ["all"], help="stage to run")
    parser.add_argument("--config", help="run configuration JSON")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. train.optimizer=lbfgs (repeatable)")
    parser.add_argument("--output-dir", help="output directory (overrides the config and $SHIFTLAB_OUTPUT_DIR)")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        config = load_run_config(args.config, args.overrides, args.output_dir)
        LabRunner(config, args.config).run(args.command)
    except Exception as e:
        code = exit_code_for(e)
        if code == EXIT_FAILURE:
            LOGGER.exception("%s failed", args.command)
        else:
            LOGGER.error("%s failed: %s", args.command, e)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
