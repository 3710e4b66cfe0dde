"""Spherical interpolation of weight tensors and plan application.

Each restored tensor is flattened to a single vector and interpolated along
the great circle between the adapted weights and the base weights, which keeps
the result's norm between the two endpoint norms instead of cutting the chord
the way linear interpolation does. Near-parallel or near-zero-norm pairs fall
back to linear interpolation (the correct limit); near-antipodal pairs are an
error because the great circle is not unique.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint_io import Checkpoint, TensorRecord
from .errors import AlignmentError, AntipodalError, ValidationError
from .planner import MergePlan
from .validation import check_finite_matrix


@dataclass(frozen=True)
class SlerpParams:
    t: float = 0.5
    parallel_threshold: float = 1e-7
    zero_norm_threshold: float = 1e-12

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise ValidationError(f"t must lie in [0, 1], got {self.t}")
        if self.parallel_threshold <= 0 or self.zero_norm_threshold <= 0:
            raise ValidationError("slerp thresholds must be positive")


def slerp(a, b, params: SlerpParams, context: str = "vectors") -> np.ndarray:
    """Interpolate from ``a`` (t=0) to ``b`` (t=1) along the great circle.

    The endpoints bypass all arithmetic and return exact copies.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValidationError(f"{context}: length mismatch {a.size} vs {b.size}")
    check_finite_matrix(a.reshape(1, -1), context)
    check_finite_matrix(b.reshape(1, -1), context)

    t = params.t
    if t == 0.0:
        return a.copy()
    if t == 1.0:
        return b.copy()

    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a < params.zero_norm_threshold or norm_b < params.zero_norm_threshold:
        return (1.0 - t) * a + t * b

    cos_angle = float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))
    if cos_angle < -1.0 + params.parallel_threshold:
        raise AntipodalError(f"{context}: near-antipodal inputs (cosine {cos_angle:.3g})")
    if 1.0 - cos_angle < params.parallel_threshold:
        return (1.0 - t) * a + t * b

    omega = np.arccos(cos_angle)
    sin_omega = np.sin(omega)
    return (np.sin((1.0 - t) * omega) * a + np.sin(t * omega) * b) / sin_omega


def apply_plan(base: Checkpoint, adapted: Checkpoint, plan: MergePlan) -> Checkpoint:
    """Produce the merged checkpoint.

    Entries flagged restore are replaced by slerp(adapted, base, t); every
    other tensor (including names absent from the plan or from the base
    checkpoint) is copied verbatim from the adapted side. At t=0 / t=1 the
    adapted / base record is copied wholesale, so the endpoints are bit-exact.
    """
    restored = {e.name: e for e in plan.entries if e.restore}
    for entry in plan.entries:
        if entry.name not in adapted:
            raise AlignmentError(f"plan names tensor {entry.name!r} missing from adapted checkpoint")
    for name in restored:
        if name not in base:
            raise AlignmentError(f"plan names tensor {name!r} missing from base checkpoint")
        if adapted[name].shape != base[name].shape:
            raise AlignmentError(
                f"tensor {name!r}: shape {base[name].shape} vs {adapted[name].shape}"
            )

    records = []
    for rec in adapted:
        entry = restored.get(rec.name)
        if entry is None:
            records.append(rec)
            continue
        base_rec = base[rec.name]
        if entry.t == 0.0:
            records.append(rec)
        elif entry.t == 1.0:
            records.append(base_rec)
        else:
            merged = slerp(
                rec.data.ravel(),
                base_rec.data.ravel(),
                SlerpParams(t=entry.t),
                context=rec.name,
            )
            records.append(
                TensorRecord(
                    name=rec.name,
                    shape=rec.shape,
                    dtype_tag="f32",
                    data=merged.astype(np.float32).reshape(rec.shape),
                )
            )

    metadata = dict(adapted.metadata)
    metadata["spearmm.plan_digest"] = plan.config_digest
    metadata["spearmm.policy"] = plan.policy.name
    return Checkpoint.from_records(records, metadata)
