"""Canonical serialization helpers.

Every float that reaches a report, plan, or digest is quantized to 9
significant digits first, so repeated runs and plan round-trips are
byte-identical.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
from typing import Any

import numpy as np


def round9(x: float) -> float:
    """Quantize to 9 significant decimal digits (idempotent)."""
    return float(format(float(x), ".9g"))


def fmt9(x: float) -> str:
    """9-significant-digit string, used for CSV cells."""
    return format(float(x), ".9g")


def canonicalize(obj: Any) -> Any:
    """Recursively convert to plain JSON types with quantized floats."""
    if isinstance(obj, enum.Enum):
        return canonicalize(obj.value)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: canonicalize(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): canonicalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonicalize(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return round9(float(obj))
    if isinstance(obj, np.ndarray):
        return [canonicalize(v) for v in obj.tolist()]
    return obj


def canonical_dumps(obj: Any) -> str:
    """Deterministic JSON: sorted keys, no whitespace, 9-digit floats."""
    return json.dumps(canonicalize(obj), sort_keys=True, separators=(",", ":"))


def sha256_hex(payload: bytes | str) -> str:
    if isinstance(payload, str):
        payload = payload.encode("utf-8")
    return hashlib.sha256(payload).hexdigest()
