"""Shared writers for the JSON and CSV artifacts every command emits.

All numbers leave the program as decimals with 12 significant digits, and
nothing time-dependent is written, so identical runs give identical bytes.
"""

import json
import math
from pathlib import Path

import numpy as np
import pandas as pd

FLOAT_FORMAT = "%.12g"


def sig(value):
    """Round a real to 12 significant digits (None for NaN/inf)."""
    value = float(value)
    if not math.isfinite(value):
        return None
    return float(FLOAT_FORMAT % value)


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return sig(obj)
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    return obj


def write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(to_jsonable(payload), indent=2, sort_keys=True)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_frame(path, frame: pd.DataFrame, index=False):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=index, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path
