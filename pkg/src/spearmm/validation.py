"""Input validation helpers shared across the package.

These mirror the checks scikit-learn does in its estimators: coerce to a
well-defined dtype/shape once at the boundary, fail loudly with the offending
location, and let the numerical code assume clean inputs.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def as_matrix(x, name: str = "weights") -> np.ndarray:
    """Coerce to a 2-D float64 matrix.

    1-D inputs become a 1xN row; higher-rank inputs are flattened to 1xN as
    well, since a vector's only singular value is its Euclidean norm.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.size == 0:
        raise ValidationError(f"{name}: empty array")
    if arr.ndim != 2:
        arr = arr.reshape(1, -1)
    return arr


def check_finite_matrix(w: np.ndarray, name: str = "weights") -> np.ndarray:
    """Reject non-finite entries, naming the first bad row/col."""
    bad = ~np.isfinite(w)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValidationError(f"{name}: non-finite entry at row {int(i)}, col {int(j)}")
    return w


def check_same_shape(a: np.ndarray, b: np.ndarray, name: str = "tensors") -> None:
    if a.shape != b.shape:
        raise ValidationError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


def check_unit_interval(value: float, name: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"{name} must lie in [0, 1], got {value}")
    return value


def check_positive_int(value: int, name: str) -> int:
    value = int(value)
    if value < 1:
        raise ValidationError(f"{name} must be a positive integer, got {value}")
    return value


def check_choice(value: str, name: str, choices: tuple[str, ...]) -> str:
    if value not in choices:
        raise ValidationError(f"{name} must be one of {choices}, got {value!r}")
    return value
