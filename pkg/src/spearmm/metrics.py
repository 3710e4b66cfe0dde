"""Per-tensor adaptation metrics and their within-group fusion.

Two complementary signals are computed for each (base, adapted) tensor pair:

* ``swci`` -- relative Frobenius displacement of the tensor, capped, and
  weighted by the spectral SNR, so large *reliable* movements score high.
* ``svdr`` -- normalized drop of the top-k singular values from base to
  adapted; negative values mean the spectrum grew.

Raw columns are min-max normalized within each component group and fused as
``alpha * swci_norm + beta * svdr_norm`` to produce the ranking score.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable

import numpy as np

from .archmap import ParamLocator
from .errors import ValidationError
from .spectral import EPSILON, estimate_snr, singular_values
from .validation import as_matrix, check_finite_matrix, check_same_shape, check_unit_interval

SNR_SOURCES = ("adapted", "base", "mean")


@dataclass(frozen=True)
class MetricConfig:
    """Knobs for the scoring pipeline.

    ``relative_change_cap`` bounds the displacement ratio when the base tensor
    has (near-)zero norm, which would otherwise dominate every ranking.
    """

    k_top: int = 16
    alpha: float = 0.5
    beta: float = 0.5
    epsilon: float = EPSILON
    relative_change_cap: float = 1e3
    snr_source: str = "adapted"

    def __post_init__(self):
        if int(self.k_top) < 1:
            raise ValidationError(f"k_top must be >= 1, got {self.k_top}")
        check_unit_interval(self.alpha, "alpha")
        check_unit_interval(self.beta, "beta")
        if self.alpha + self.beta <= 0:
            raise ValidationError("alpha + beta must be > 0")
        if self.snr_source not in SNR_SOURCES:
            raise ValidationError(f"snr_source must be one of {SNR_SOURCES}, got {self.snr_source!r}")


@dataclass(frozen=True)
class RawMetrics:
    """Unnormalized metric bundle for one tensor pair."""

    swci: float
    svdr: float
    snr: float
    rel_change: float


@dataclass
class ScoredRow:
    """A locator with its raw metrics and the fused (normalized) score."""

    locator: ParamLocator
    metrics: RawMetrics
    fused: float = field(default=0.0)


def _prepare_pair(w0, wprop, name: str) -> tuple[np.ndarray, np.ndarray]:
    a = check_finite_matrix(as_matrix(w0, f"{name} (base)"), f"{name} (base)")
    b = check_finite_matrix(as_matrix(wprop, f"{name} (adapted)"), f"{name} (adapted)")
    check_same_shape(a, b, name)
    return a, b


def compute_swci(w0, wprop, cfg: MetricConfig, name: str = "tensor") -> tuple[float, float, float]:
    """Return (swci, rel_change, snr) for a tensor pair."""
    a, b = _prepare_pair(w0, wprop, name)
    rel = float(np.linalg.norm(b - a) / (np.linalg.norm(a) + cfg.epsilon))
    rel = min(rel, cfg.relative_change_cap)
    if cfg.snr_source == "adapted":
        snr = estimate_snr(b, name).snr
    elif cfg.snr_source == "base":
        snr = estimate_snr(a, name).snr
    else:
        snr = 0.5 * (estimate_snr(a, name).snr + estimate_snr(b, name).snr)
    return rel * snr, rel, snr


def compute_svdr(w0, wprop, cfg: MetricConfig, name: str = "tensor") -> float:
    """Top-k singular-value drop of adapted relative to base."""
    a, b = _prepare_pair(w0, wprop, name)
    k = min(int(cfg.k_top), min(a.shape))
    s0 = singular_values(a, name).top_k_sum(k)
    sp = singular_values(b, name).top_k_sum(k)
    return (s0 - sp) / (s0 + cfg.epsilon)


def compute_metrics(w0, wprop, cfg: MetricConfig, name: str = "tensor") -> RawMetrics:
    swci, rel, snr = compute_swci(w0, wprop, cfg, name)
    svdr = compute_svdr(w0, wprop, cfg, name)
    return RawMetrics(swci=swci, svdr=svdr, snr=snr, rel_change=rel)


def minmax_normalize(values: np.ndarray) -> np.ndarray:
    """Min-max to [0, 1]; a constant column carries no signal and maps to 0.5."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.full_like(values, 0.5)
    return (values - lo) / (hi - lo)


def fuse_scores(
    rows: Iterable[tuple[ParamLocator, RawMetrics]],
    cfg: MetricConfig,
    grouping: Callable[[ParamLocator], Hashable] | None = None,
) -> list[tuple[ParamLocator, float]]:
    """Fuse swci/svdr into one score, normalizing within each group.

    ``grouping`` assigns each locator to exactly one group (default: its
    component kind). Output order matches input order.
    """
    rows = list(rows)
    if not rows:
        raise ValidationError("fuse_scores: no rows to fuse")
    if grouping is None:
        grouping = lambda loc: loc.component

    by_group: dict[Hashable, list[int]] = {}
    for i, (loc, _) in enumerate(rows):
        by_group.setdefault(grouping(loc), []).append(i)

    fused = np.empty(len(rows))
    for indices in by_group.values():
        swci_col = minmax_normalize(np.array([rows[i][1].swci for i in indices]))
        svdr_col = minmax_normalize(np.array([rows[i][1].svdr for i in indices]))
        for j, i in enumerate(indices):
            fused[i] = cfg.alpha * swci_col[j] + cfg.beta * svdr_col[j]

    return [(loc, float(fused[i])) for i, (loc, _) in enumerate(rows)]
