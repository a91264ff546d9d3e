"""
Constants and configuration defaults for the shift laboratory.
"""

# Versions
TOOL_VERSION = "1.0.0"
SIM_CONFIG_VERSION = "1.0"
RUN_CONFIG_VERSION = "1.0"
FEATURE_SPEC_VERSION = "1.0"
MODEL_VERSION = "1.0"

# Time
MINUTES_PER_HOUR = 60
MINUTES_PER_DAY = 24 * 60
EPOCH_ISO = "2000-01-01"

# Simulation defaults
SIM_DEFAULT_SEED = 20200710
SIM_DEFAULT_ENCOUNTERS = 2000
SIM_DEFAULT_PREVALENCE = 0.007
SIM_MEDIAN_LOS_DAYS = 5.0
SIM_LOS_SIGMA = 0.55
SIM_MAX_LOS_DAYS = 21
SIM_PRIOR_OUTCOME_RATE = 0.015
SIM_REVISION_MIN_MINUTES = 12 * MINUTES_PER_HOUR
SIM_REVISION_MAX_MINUTES = 10 * MINUTES_PER_DAY
SIM_CLASS_CODE_FLIP_DELAY_DAYS = 2

# Pipelines
PIPELINE_RETROSPECTIVE = "retrospective"
PIPELINE_PROSPECTIVE = "prospective"
COHORT_CLASS_CODES = "class_codes"
COHORT_CENSUS = "census"
CLASS_INPATIENT = "inpatient"
CLASS_OUTPATIENT = "outpatient"
RETRO_LAG_MIN_MINUTES = 1 * MINUTES_PER_DAY
RETRO_LAG_MAX_MINUTES = 7 * MINUTES_PER_DAY
PRO_LAG_MIN_MINUTES = 0
PRO_LAG_MAX_MINUTES = 8 * MINUTES_PER_HOUR
PRO_DAILY_CUTOFF_MINUTES = 6 * MINUTES_PER_HOUR
RETRO_AS_OF_DAYS_AFTER_PERIOD = 30

# Inclusion criteria
MIN_LOS_CALENDAR_DAYS = 3
EARLY_OUTCOME_DAYS = 2
PRIOR_OUTCOME_WINDOW_DAYS = 14
HISTORY_LOOKBACK_DAYS = 365

# Encoding
N_QUINTILE_BOUNDS = 4
MIN_VALUES_FOR_BINS = 5
DEFAULT_MIN_ENCOUNTERS = 10
PENDING_VALUE = "pending"

# Model
TRAIN_DAYS_PER_ENCOUNTER = 3
TRAIN_DEFAULT_GRID = [1e-4, 1e-3, 1e-2, 1e-1]
TRAIN_TOLERANCE = 1e-8
TRAIN_MAX_ITERATIONS = 5000
ARMIJO_C = 1e-4
BACKTRACK_FACTOR = 0.5
WOLFE_CURVATURE = 0.9
LOSS_ROUNDING = 1e-13
MIN_STEP = 1e-16

# Metrics
BOOTSTRAP_REPLICATES = 1000
CI_LEVEL = 0.95
THRESHOLD_PERCENTILE = 95.0
MAX_REDRAWS = 100
UNDEFINED_MARKER = "undefined"

# Gap analysis
DISCORDANCE_THRESHOLD = 0.5
DRIFT_ALPHA = 0.05
DISCREPANCY_HIST_BINS = 20
FREQUENT_DISCREPANCY_RATE = 0.01

# Files
OUTPUT_DIR_ENV = "SHIFTLAB_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "shiftlab_out"
MANIFEST_NAME = "manifest.json"
EXTRACT_EXTENSION = ".jsonl"
ENCOUNTERS_SUFFIX = ".encounters.jsonl"
TRIPLES_SUFFIX = ".triples.csv"
ROWS_SUFFIX = ".rows.csv"
COLUMNS_SUFFIX = ".columns.csv"
DAILY_SCORES_NAME = "daily_scores.csv"

# Dataset names
DATASET_RET = "d_ret"
DATASET_PRO = "d_pro"
DATASET_RET_PRIME = "d_ret_prime"
TRAIN_PREFIX = "train"
