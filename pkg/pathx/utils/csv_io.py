"""
CSV interchange: fixed headers, UTF-8, '.' decimals, full float precision.
"""

import logging
import os
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from pathx.errors import InputFormatError
from pathx.models.models import ClinicalRecord

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
CLINICAL_COLUMNS = ["case_id", "time_days", "event", "label"]


def _ensure_dir(path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def write_table(path: str, frame: pd.DataFrame) -> None:
    _ensure_dir(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", encoding="utf-8")


def write_rows(path: str, columns: Sequence[str], rows: Sequence[Sequence]) -> None:
    write_table(path, pd.DataFrame(list(rows), columns=list(columns)))


def _read_frame(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise InputFormatError(f"file not found: {path}")
    try:
        return pd.read_csv(
            path, dtype={"case_id": str}, keep_default_na=False, na_values=[""], float_precision="round_trip"
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise InputFormatError(f"cannot parse {path}: {e}")


def write_matrix(path: str, case_ids: Sequence[str], matrix: np.ndarray, prefix: str) -> None:
    """case_id,{prefix}0,...,{prefix}{d-1}"""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape[0] != len(case_ids):
        raise ValueError("row count does not match case ids")
    frame = pd.DataFrame(matrix, columns=[f"{prefix}{i}" for i in range(matrix.shape[1])])
    frame.insert(0, "case_id", list(case_ids))
    write_table(path, frame)


def read_matrix(path: str, prefix: str) -> Tuple[List[str], np.ndarray]:
    frame = _read_frame(path)
    columns = list(frame.columns)
    if not columns or columns[0] != "case_id":
        raise InputFormatError(f"{path}: first column must be case_id")
    expected = [f"{prefix}{i}" for i in range(len(columns) - 1)]
    if columns[1:] != expected or not expected:
        raise InputFormatError(f"{path}: expected columns case_id,{prefix}0..{prefix}{len(columns) - 2}")
    case_ids = frame["case_id"].tolist()
    if len(set(case_ids)) != len(case_ids):
        raise InputFormatError(f"{path}: duplicate case_id")
    try:
        matrix = frame[expected].to_numpy(dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise InputFormatError(f"{path}: non-numeric value ({e})")
    if not np.all(np.isfinite(matrix)):
        raise InputFormatError(f"{path}: missing or non-finite values")
    return case_ids, matrix


def write_features(path: str, case_ids: Sequence[str], features: np.ndarray) -> None:
    write_matrix(path, case_ids, features, "f")


def read_features(path: str) -> Tuple[List[str], np.ndarray]:
    return read_matrix(path, "f")


def write_latent(path: str, case_ids: Sequence[str], latent: np.ndarray) -> None:
    write_matrix(path, case_ids, latent, "z")


def read_latent(path: str) -> Tuple[List[str], np.ndarray]:
    return read_matrix(path, "z")


def read_clinical(path: str) -> List[ClinicalRecord]:
    """clinical.csv: case_id,time_days,event[,label]"""
    frame = _read_frame(path)
    missing = [c for c in CLINICAL_COLUMNS[:3] if c not in frame.columns]
    if missing:
        raise InputFormatError(f"{path}: missing columns {missing}")

    records = []
    for row in frame.itertuples(index=False):
        case_id = str(row.case_id)
        try:
            time = float(row.time_days)
            event = float(row.event)
        except (TypeError, ValueError):
            raise InputFormatError(f"{path}: bad time/event for case '{case_id}'")
        if event not in (0.0, 1.0):
            raise InputFormatError(f"{path}: event must be 0 or 1 for case '{case_id}'")
        if not np.isfinite(time) or time < 0:
            raise InputFormatError(f"{path}: negative or missing time for case '{case_id}'")
        label = getattr(row, "label", None)
        label = None if label is None or (isinstance(label, float) and np.isnan(label)) else str(label)
        records.append(ClinicalRecord(case_id=case_id, time=time, event=bool(event), label=label))

    ids = [r.case_id for r in records]
    if len(set(ids)) != len(ids):
        raise InputFormatError(f"{path}: duplicate case_id")
    return records


def write_clinical(path: str, records: Sequence[ClinicalRecord]) -> None:
    write_rows(path, CLINICAL_COLUMNS, [
        (r.case_id, r.time, int(r.event), r.label if r.label is not None else "") for r in records
    ])


def read_truth(path: str) -> Optional[dict]:
    if not os.path.exists(path):
        return None
    frame = _read_frame(path)
    return {str(c): str(g) for c, g in zip(frame["case_id"], frame["group"])}
