"""Report assembly: per-tensor importance tables, layer heatmaps, and
trade-off frontiers.

Everything here is a pure function of the inputs; rows are sorted by
(component, layer, name) and floats are serialized at 9 significant digits so
repeated runs emit identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .archmap import (
    ArchProfile,
    ComponentKind,
    LAYERED_KINDS,
    ParamLocator,
    classify,
)
from .checkpoint_io import Checkpoint, aligned_pairs
from .errors import ValidationError
from .metrics import MetricConfig, RawMetrics, ScoredRow, compute_metrics, fuse_scores, minmax_normalize
from .planner import MergePlan, Policy, build_plan
from .search import EvaluatorFn, SearchTrial, evaluate_config, EvaluatorFailure
from .serialize import canonical_dumps, fmt9


@dataclass
class ImportanceRow:
    """Per-tensor metric bundle as reported by the analyze command."""

    name: str
    layer: int | None
    component: ComponentKind
    snr: float
    swci: float
    svdr: float
    rel_change: float
    fused: float
    rank_in_group: int
    restore: bool


@dataclass
class AnalysisReport:
    rows: list[ImportanceRow]
    metric_config: MetricConfig
    policy: Policy
    base_digest: str
    adapted_digest: str
    only_base: list[str]
    only_adapted: list[str]

    def to_dict(self) -> dict:
        return {
            "rows": [
                {
                    "name": r.name,
                    "layer": r.layer,
                    "component": r.component.value,
                    "snr": r.snr,
                    "swci": r.swci,
                    "svdr": r.svdr,
                    "rel_change": r.rel_change,
                    "fused": r.fused,
                    "rank_in_group": r.rank_in_group,
                    "restore": r.restore,
                }
                for r in self.rows
            ],
            "metric_config": {
                "k_top": self.metric_config.k_top,
                "alpha": self.metric_config.alpha,
                "beta": self.metric_config.beta,
                "epsilon": self.metric_config.epsilon,
                "relative_change_cap": self.metric_config.relative_change_cap,
                "snr_source": self.metric_config.snr_source,
            },
            "policy": {
                "name": self.policy.name,
                "frac_mlp": self.policy.frac_mlp,
                "frac_attn": self.policy.frac_attn,
                "t": self.policy.t,
                "mode": self.policy.mode,
                "seed": self.policy.seed,
                "restore_end": self.policy.restore_end,
            },
            "base_digest": self.base_digest,
            "adapted_digest": self.adapted_digest,
            "only_base": self.only_base,
            "only_adapted": self.only_adapted,
        }


def score_pairs(
    base: Checkpoint,
    adapted: Checkpoint,
    cfg: MetricConfig,
    profile: ArchProfile,
) -> tuple[list[ScoredRow], list[str], list[str]]:
    """Metrics plus fused scores for every aligned pair."""
    alignment = aligned_pairs(base, adapted)
    if not alignment.pairs:
        raise ValidationError("checkpoints share no tensor names")

    locators: list[ParamLocator] = []
    raws: list[RawMetrics] = []
    for rec_base, rec_adapted in alignment.pairs:
        locators.append(classify(rec_base.name, profile))
        raws.append(compute_metrics(rec_base.as_matrix(), rec_adapted.as_matrix(), cfg, rec_base.name))

    fused = fuse_scores(list(zip(locators, raws)), cfg)
    rows = [
        ScoredRow(locator=loc, metrics=raw, fused=score)
        for (loc, raw), (_, score) in zip(zip(locators, raws), fused)
    ]
    return rows, alignment.only_base, alignment.only_adapted


def analyze_checkpoints(
    base: Checkpoint,
    adapted: Checkpoint,
    cfg: MetricConfig,
    policy: Policy,
    profile: ArchProfile,
) -> tuple[AnalysisReport, MergePlan, list[ScoredRow]]:
    """Score, rank, and plan; the report echoes the plan's decisions."""
    scored, only_base, only_adapted = score_pairs(base, adapted, cfg, profile)
    plan = build_plan(scored, policy)

    by_name = {row.locator.name: row for row in scored}
    rows = []
    for entry in plan.entries:  # already sorted by (component, layer, name)
        row = by_name[entry.name]
        rows.append(
            ImportanceRow(
                name=entry.name,
                layer=entry.layer,
                component=entry.component,
                snr=row.metrics.snr,
                swci=row.metrics.swci,
                svdr=row.metrics.svdr,
                rel_change=row.metrics.rel_change,
                fused=row.fused,
                rank_in_group=entry.rank_in_group,
                restore=entry.restore,
            )
        )

    report = AnalysisReport(
        rows=rows,
        metric_config=cfg,
        policy=policy,
        base_digest=base.content_digest(),
        adapted_digest=adapted.content_digest(),
        only_base=only_base,
        only_adapted=only_adapted,
    )
    return report, plan, scored


def write_report(report: AnalysisReport, path: str | Path) -> None:
    Path(path).write_text(canonical_dumps(report.to_dict()) + "\n", encoding="utf-8")


def read_report_rows(path: str | Path) -> list[dict]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return list(raw["rows"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"report {path}: malformed ({exc})") from exc


# --- heatmap ---------------------------------------------------------------

@dataclass
class HeatmapTable:
    """Per-component rows of layer scores with a top-half mask.

    Values are min-max normalized within each row (constant rows map to 0.5);
    the mask marks the ceil(L/2) highest cells per row, ties broken toward
    lower layer indices.
    """

    components: list[str]
    layers: list[int]
    values: np.ndarray  # shape (len(components), len(layers))
    top_mask: np.ndarray  # bool, same shape


def heatmap_table(rows: Sequence[dict]) -> HeatmapTable:
    """Build the layer-impact table from analyze-report rows."""
    layered: dict[str, dict[int, float]] = {}
    for row in rows:
        component = str(row["component"])
        layer = row["layer"]
        if layer is None or component not in {k.value for k in LAYERED_KINDS}:
            continue
        layered.setdefault(component, {})[int(layer)] = float(row["fused"])

    if not layered:
        raise ValidationError("report contains no layered components to plot")

    n_layers = max(max(cells) for cells in layered.values()) + 1
    layers = list(range(n_layers))
    components = [k.value for k in LAYERED_KINDS if k.value in layered]

    values = np.full((len(components), n_layers), 0.5)
    mask = np.zeros((len(components), n_layers), dtype=bool)
    top_count = math.ceil(n_layers / 2)
    for i, component in enumerate(components):
        cells = layered[component]
        if set(cells) != set(layers):
            missing = sorted(set(layers) - set(cells))
            raise ValidationError(f"component {component}: missing layers {missing}")
        row = np.array([cells[j] for j in layers])
        values[i] = minmax_normalize(row)
        order = sorted(layers, key=lambda j: (-values[i, j], j))
        mask[i, order[:top_count]] = True
    return HeatmapTable(components=components, layers=layers, values=values, top_mask=mask)


def write_heatmap_csv(table: HeatmapTable, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["component", "layer", "value", "top"])
        for i, component in enumerate(table.components):
            for j in table.layers:
                writer.writerow([component, j, fmt9(table.values[i, j]), int(table.top_mask[i, j])])


# --- frontier ---------------------------------------------------------------

@dataclass
class FrontierPoint:
    frac_mlp: float
    frac_attn: float
    t: float
    domain_score: float | None
    general_score: float | None
    error: str = ""


def frontier_sweep(
    base: Checkpoint,
    adapted: Checkpoint,
    scored: Sequence[ScoredRow],
    fractions: Sequence[float],
    t: float,
    evaluator: EvaluatorFn,
    base_policy: Policy | None = None,
) -> list[FrontierPoint]:
    """Evaluate a grid of restoration fractions applied to both macro-groups."""
    if not fractions:
        raise ValidationError("frontier: empty fraction grid")
    policy = base_policy if base_policy is not None else Policy.preset("balanced")
    points = []
    with tempfile.TemporaryDirectory(prefix="spearmm-frontier-") as tmp:
        workdir = Path(tmp)
        for frac in fractions:
            trial_policy = policy.with_config(frac_mlp=float(frac), frac_attn=float(frac), t=float(t))
            point = FrontierPoint(
                frac_mlp=float(frac), frac_attn=float(frac), t=float(t),
                domain_score=None, general_score=None,
            )
            try:
                domain, general, _ = evaluate_config(
                    base, adapted, scored, trial_policy, evaluator, workdir
                )
            except EvaluatorFailure as exc:
                point.error = str(exc)
            else:
                point.domain_score = domain
                point.general_score = general
            points.append(point)
    return points


def write_frontier_csv(points: Sequence[FrontierPoint], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frac_mlp", "frac_attn", "t", "domain_score", "general_score"])
        for p in points:
            writer.writerow(
                [
                    fmt9(p.frac_mlp),
                    fmt9(p.frac_attn),
                    fmt9(p.t),
                    "" if p.domain_score is None else fmt9(p.domain_score),
                    "" if p.general_score is None else fmt9(p.general_score),
                ]
            )


def write_trials_jsonl(trials: Sequence[SearchTrial], path: str | Path) -> None:
    """One JSON object per trial; failed trials carry null scores."""
    lines = []
    for tr in trials:
        record = {
            "index": tr.index,
            "config": tr.config,
            "domain_score": None if tr.failed else tr.domain_score,
            "general_score": None if tr.failed else tr.general_score,
            "objective": None if tr.failed else tr.objective,
            "plan_digest": tr.plan_digest,
            "failed": tr.failed,
            "error": tr.error,
        }
        lines.append(canonical_dumps(record))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
