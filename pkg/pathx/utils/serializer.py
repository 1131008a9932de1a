"""
JSON serialization helpers for reports, sidecars and the run manifest
"""
import json
import os
from datetime import datetime
from enum import Enum
from typing import Any

import numpy as np
from pydantic import BaseModel


def serialize_document(value: Any) -> Any:
    """
    Convert a value to a JSON-serializable structure
    - pydantic models become dicts
    - numpy arrays and scalars become lists and Python numbers
    - datetimes become ISO strings, enums their values
    - dicts, lists and tuples are handled recursively
    """
    if value is None:
        return None
    if isinstance(value, BaseModel):
        return serialize_document(value.model_dump())
    if isinstance(value, np.ndarray):
        return serialize_document(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, datetime):
        return value.isoformat()
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {str(key): serialize_document(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [serialize_document(item) for item in value]
    return value


def dumps(data: Any) -> str:
    return json.dumps(serialize_document(data), indent=2, sort_keys=True) + "\n"


def write_json(path: str, data: Any) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps(data))


def read_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
