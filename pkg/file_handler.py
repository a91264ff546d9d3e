"""
File handler for saving and loading laboratory artifacts.

Formats:
    extracts       JSONL, header line then one encounter-day per line;
                   encounter metadata in a sibling `.encounters.jsonl`
    feature specs  JSON
    datasets       sparse triples CSV (row, column, value) + rows CSV +
                   columns CSV
    models         JSON
    reports        CSV with `undefined` for missing values, bundle JSON
"""
import hashlib
import json
import logging
import math
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd
from scipy import sparse

from analysis.metrics import ScoreSet
from ehr_model import DayRecord, EncounterMeta, RawExtract
from features.encoding import FeatureSpecSet
from features.matrix import ROW_COLUMNS, FeatureMatrix
from features.taxonomy import FeatureTaxonomy
from risk_model import RiskModel
from utils.constants import (
    COLUMNS_SUFFIX, ENCOUNTERS_SUFFIX, EXTRACT_EXTENSION, MANIFEST_NAME, ROWS_SUFFIX, TOOL_VERSION,
    TRIPLES_SUFFIX, UNDEFINED_MARKER,
)
from utils.errors import DataError, MissingInputError
from utils.timeline import parse_date

LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]

DAILY_SCORE_COLUMNS = ["run_date", "encounter_id", "day_of_stay", "score"]
SCORE_SET_COLUMNS = ["encounter_id", "admit_month_year", "score", "label"]


def _require(path: PathLike) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(path)
    return path


def _json_default(value: Any):
    if isinstance(value, (date, datetime)):
        return value.isoformat()
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def mark_undefined(value: Any) -> Any:
    """None and NaN become the `undefined` marker, recursively."""
    if isinstance(value, dict):
        return {k: mark_undefined(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [mark_undefined(v) for v in value]
    if value is None or (isinstance(value, (float, np.floating)) and math.isnan(value)):
        return UNDEFINED_MARKER
    return value


class FileHandler:
    """Handle saving and loading laboratory files."""

    # ---- JSON ----------------------------------------------------------

    @staticmethod
    def save_json(data: Any, path: PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2, sort_keys=True, default=_json_default)
            f.write("\n")
        return path

    @staticmethod
    def load_json(path: PathLike) -> Any:
        path = _require(path)
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"invalid JSON: {e.msg}", str(path), e.lineno) from e

    # ---- raw extracts --------------------------------------------------

    @staticmethod
    def encounters_path(path: PathLike) -> Path:
        path = Path(path)
        return path.with_name(path.name[:-len(EXTRACT_EXTENSION)] + ENCOUNTERS_SUFFIX) \
            if path.name.endswith(EXTRACT_EXTENSION) else path.with_name(path.name + ENCOUNTERS_SUFFIX)

    @staticmethod
    def save_extract(extract: RawExtract, path: PathLike) -> List[Path]:
        """Write rows and encounter metadata; returns both paths."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = {
            'mode': extract.mode,
            'n_rows': len(extract.rows),
            'outage_days': [d.isoformat() for d in sorted(extract.outage_days)],
        }
        with open(path, 'w', encoding='utf-8') as f:
            f.write(json.dumps(header, sort_keys=True) + "\n")
            for row in extract.rows:
                record = {
                    'encounter_id': row.encounter_id,
                    'date': row.date.isoformat(),
                    'day_of_stay': row.day_of_stay,
                    'values': {str(k): row.values[k] for k in sorted(row.values)},
                }
                f.write(json.dumps(record, sort_keys=True, default=_json_default) + "\n")
        encounters = FileHandler.encounters_path(path)
        with open(encounters, 'w', encoding='utf-8') as f:
            for meta in extract.encounters.values():
                f.write(json.dumps(meta.to_dict(), sort_keys=True, default=_json_default) + "\n")
        LOGGER.info("saved %s extract: %d rows, %d encounters -> %s", extract.mode, len(extract.rows),
                    len(extract.encounters), path, extra={"stage": "io"})
        return [path, encounters]

    @staticmethod
    def load_encounters(path: PathLike) -> Dict[str, EncounterMeta]:
        """Encounter metadata of an extract (given the extract or the encounters path)."""
        path = Path(path)
        if not path.name.endswith(ENCOUNTERS_SUFFIX):
            path = FileHandler.encounters_path(path)
        path = _require(path)
        encounters = {}
        with open(path, 'r', encoding='utf-8') as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    meta = EncounterMeta.from_dict(json.loads(line))
                except (json.JSONDecodeError, KeyError) as e:
                    raise DataError(f"malformed encounter record: {e}", str(path), line_no) from e
                encounters[meta.encounter_id] = meta
        return encounters

    @staticmethod
    def load_extract(path: PathLike) -> RawExtract:
        """
        Read an extract written by `save_extract`.

        Raises:
            MissingInputError: either file is absent.
            DataError: malformed line (with its line number).
        """
        path = _require(path)
        encounters = FileHandler.load_encounters(path)
        rows = []
        with open(path, 'r', encoding='utf-8') as f:
            try:
                header = json.loads(f.readline())
                mode = header['mode']
                outage_days = [parse_date(d) for d in header.get('outage_days', [])]
            except (json.JSONDecodeError, KeyError) as e:
                raise DataError(f"malformed extract header: {e}", str(path), 1) from e
            for line_no, line in enumerate(f, start=2):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    rows.append(DayRecord(
                        encounter_id=record['encounter_id'],
                        date=parse_date(record['date']),
                        day_of_stay=int(record['day_of_stay']),
                        values={int(k): v for k, v in record['values'].items()},
                    ))
                except (json.JSONDecodeError, KeyError, ValueError) as e:
                    raise DataError(f"malformed row: {e}", str(path), line_no) from e
                if rows[-1].encounter_id not in encounters:
                    raise DataError(f"row of unknown encounter {rows[-1].encounter_id}", str(path), line_no)
        return RawExtract(mode=mode, rows=rows, encounters=encounters, outage_days=outage_days)

    # ---- taxonomy, feature specs, models -------------------------------

    @staticmethod
    def save_taxonomy(taxonomy: FeatureTaxonomy, path: PathLike) -> Path:
        return FileHandler.save_json(taxonomy.to_dict(), path)

    @staticmethod
    def load_taxonomy(path: PathLike) -> FeatureTaxonomy:
        return FeatureTaxonomy.from_dict(FileHandler.load_json(path))

    @staticmethod
    def save_feature_specs(spec_set: FeatureSpecSet, path: PathLike) -> Path:
        return FileHandler.save_json(spec_set.to_dict(), path)

    @staticmethod
    def load_feature_specs(path: PathLike) -> FeatureSpecSet:
        return FeatureSpecSet.from_dict(FileHandler.load_json(path))

    @staticmethod
    def save_model(model: RiskModel, path: PathLike) -> Path:
        return FileHandler.save_json(model.to_dict(), path)

    @staticmethod
    def load_model(path: PathLike) -> RiskModel:
        return RiskModel.from_dict(FileHandler.load_json(path))

    # ---- feature matrices ----------------------------------------------

    @staticmethod
    def dataset_paths(stem: PathLike) -> Dict[str, Path]:
        stem = Path(stem)
        return {
            'triples': stem.with_name(stem.name + TRIPLES_SUFFIX),
            'rows': stem.with_name(stem.name + ROWS_SUFFIX),
            'columns': stem.with_name(stem.name + COLUMNS_SUFFIX),
        }

    @staticmethod
    def save_dataset(matrix: FeatureMatrix, stem: PathLike) -> List[Path]:
        """Triples (row, column, 1) for every active cell, plus row and column metadata."""
        paths = FileHandler.dataset_paths(stem)
        paths['triples'].parent.mkdir(parents=True, exist_ok=True)
        coo = matrix.X.tocoo()
        order = np.lexsort((coo.col, coo.row))
        pd.DataFrame({
            "row": coo.row[order], "column": coo.col[order], "value": np.ones(len(order), dtype=np.int64),
        }).to_csv(paths['triples'], index=False)
        rows = matrix.rows[ROW_COLUMNS].copy()
        rows["date"] = [d.isoformat() for d in rows["date"]]
        rows.insert(0, "row", np.arange(len(rows)))
        rows.to_csv(paths['rows'], index=False)
        groups = matrix.column_groups or [""] * matrix.n_cols
        pd.DataFrame({"column": np.arange(matrix.n_cols), "column_id": matrix.columns, "group": groups}) \
            .to_csv(paths['columns'], index=False)
        return list(paths.values())

    @staticmethod
    def load_dataset(stem: PathLike) -> FeatureMatrix:
        """
        Read a dataset written by `save_dataset`. Rows without any active
        cell are legal but logged as a warning with their count.

        Raises:
            MissingInputError: a file is absent.
            DataError: a value other than 1, or an index out of range, with
                its CSV line number.
        """
        paths = {k: _require(p) for k, p in FileHandler.dataset_paths(stem).items()}
        rows = pd.read_csv(paths['rows'], dtype={"encounter_id": str, "date": str, "admit_month_year": str},
                           keep_default_na=False)
        columns = pd.read_csv(paths['columns'], dtype={"column_id": str, "group": str}, keep_default_na=False)
        triples = pd.read_csv(paths['triples'])
        source = str(paths['triples'])

        missing = [c for c in ["row", "column", "value"] if c not in triples.columns]
        if missing:
            raise DataError(f"missing columns {missing}", source, 1)
        if not np.array_equal(rows["row"].to_numpy(), np.arange(len(rows))):
            raise DataError("row indices must be 0..n-1 in order", str(paths['rows']))

        def first_bad(mask: np.ndarray) -> int:
            return int(np.flatnonzero(mask)[0]) + 2  # header is line 1

        values = pd.to_numeric(triples["value"], errors="coerce").to_numpy()
        bad = ~(values == 1)
        if bad.any():
            line = first_bad(bad)
            raise DataError(f"non-binary value {triples['value'].iloc[line - 2]!r}", source, line)
        r = pd.to_numeric(triples["row"], errors="coerce").to_numpy()
        c = pd.to_numeric(triples["column"], errors="coerce").to_numpy()
        bad = ~((r >= 0) & (r < len(rows)) & (r == np.floor(r)))
        if bad.any():
            raise DataError("row index out of range", source, first_bad(bad))
        bad = ~((c >= 0) & (c < len(columns)) & (c == np.floor(c)))
        if bad.any():
            raise DataError("column index out of range", source, first_bad(bad))

        X = sparse.csr_matrix((np.ones(len(r)), (r.astype(np.int64), c.astype(np.int64))),
                              shape=(len(rows), len(columns)))
        frame = rows[ROW_COLUMNS].copy()
        frame["date"] = [parse_date(d) for d in frame["date"]]
        frame["day_of_stay"] = frame["day_of_stay"].astype(np.int64)
        frame["label"] = frame["label"].astype(np.int64)
        matrix = FeatureMatrix(X, frame, list(columns["column_id"]), list(columns["group"]))

        empty_rows = matrix.n_empty_rows
        if empty_rows:
            LOGGER.warning("%s: %d metadata rows have no active cells", paths['rows'], empty_rows,
                           extra={"stage": "io"})
        LOGGER.info("loaded %s: %d rows x %d columns", Path(stem).name, matrix.n_rows, matrix.n_cols,
                    extra={"stage": "io"})
        return matrix

    # ---- scores --------------------------------------------------------

    @staticmethod
    def save_score_set(scores: ScoreSet, path: PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        scores.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path

    @staticmethod
    def load_score_set(path: PathLike) -> ScoreSet:
        path = _require(path)
        frame = pd.read_csv(path, dtype={"encounter_id": str, "admit_month_year": str}, keep_default_na=False)
        missing = [c for c in SCORE_SET_COLUMNS if c not in frame.columns]
        if missing:
            raise DataError(f"missing columns {missing}", str(path), 1)
        return ScoreSet(frame["encounter_id"].to_numpy(), frame["admit_month_year"].to_numpy(),
                        frame["score"].to_numpy(dtype=np.float64), frame["label"].to_numpy(dtype=np.int64))

    @staticmethod
    def persist_daily_scores(matrix: FeatureMatrix, scores: np.ndarray, path: PathLike) -> Path:
        """
        Append (run_date, encounter_id, day_of_stay, score) for every scored
        row; the header is written only when the file is new.
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame({
            "run_date": [d.isoformat() for d in matrix.rows["date"]],
            "encounter_id": matrix.rows["encounter_id"].to_numpy(),
            "day_of_stay": matrix.rows["day_of_stay"].to_numpy(),
            "score": np.asarray(scores, dtype=np.float64),
        })
        is_new = not path.exists() or path.stat().st_size == 0
        frame.to_csv(path, mode='a', header=is_new, index=False, float_format="%.17g")
        LOGGER.info("appended %d daily scores to %s", len(frame), path, extra={"stage": "score"})
        return path

    @staticmethod
    def load_daily_scores(path: PathLike) -> pd.DataFrame:
        path = _require(path)
        frame = pd.read_csv(path, dtype={"run_date": str, "encounter_id": str})
        missing = [c for c in DAILY_SCORE_COLUMNS if c not in frame.columns]
        if missing:
            raise DataError(f"missing columns {missing}", str(path), 1)
        return frame

    # ---- reports -------------------------------------------------------

    @staticmethod
    def save_table(table: pd.DataFrame, path: PathLike) -> Path:
        """CSV with missing values written as the `undefined` marker."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        table.astype(object).where(table.notna(), UNDEFINED_MARKER).to_csv(path, index=False)
        return path

    @staticmethod
    def load_table(path: PathLike) -> pd.DataFrame:
        path = _require(path)
        return pd.read_csv(path, na_values=[UNDEFINED_MARKER], keep_default_na=False)

    @staticmethod
    def file_sha256(path: PathLike) -> str:
        digest = hashlib.sha256()
        with open(path, 'rb') as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                digest.update(chunk)
        return digest.hexdigest()

    @staticmethod
    def write_manifest(output_dir: PathLike, command: str, config_hash: str, seed: int,
                       inputs: Iterable[str], started_at: datetime) -> Path:
        """
        manifest.json: tool version, config hash, seed, inputs, timestamps
        and the sha256 of every file under the output directory.
        """
        output_dir = Path(output_dir)
        files = {}
        for path in sorted(output_dir.rglob("*")):
            if path.is_file() and path.name != MANIFEST_NAME:
                files[path.relative_to(output_dir).as_posix()] = FileHandler.file_sha256(path)
        manifest = {
            'tool_version': TOOL_VERSION,
            'command': command,
            'config_hash': config_hash,
            'seed': seed,
            'inputs': sorted(set(inputs)),
            'started_at': started_at.isoformat(),
            'finished_at': datetime.now(timezone.utc).isoformat(),
            'files': files,
        }
        return FileHandler.save_json(manifest, output_dir / MANIFEST_NAME)
