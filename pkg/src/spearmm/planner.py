"""Ranking, policy-driven selection, and serializable merge plans.

Scores are ranked within each component group; the top fraction per submodule
(every MLP projection gets ``frac_mlp``, every attention projection gets
``frac_attn``) is flagged for restoration. The selection count uses half-up
rounding: N = floor(frac * G + 0.5). Embeddings, norms, and heads are never
restored and pass through from the adapted checkpoint.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .archmap import ComponentKind, MacroGroup, ParamLocator, macro_group
from .errors import ValidationError
from .metrics import ScoredRow, minmax_normalize
from .serialize import canonical_dumps, round9, sha256_hex
from .validation import check_choice, check_unit_interval

POLICY_PRESETS: dict[str, tuple[float, float]] = {
    # name -> (frac_mlp, frac_attn)
    "conservative": (0.40, 0.40),
    "balanced": (0.50, 0.60),
    "aggressive": (0.60, 0.95),
}

SELECTION_MODES = ("combined", "swci_only", "svdr_only", "snr_only", "random")
RESTORE_ENDS = ("top", "bottom")


@dataclass(frozen=True)
class Policy:
    """Restoration fractions plus how to rank and interpolate.

    ``restore_end='bottom'`` inverts the selection to the lowest-ranked
    fraction, kept as an experimentation escape hatch; the default restores
    the top-ranked (most-adapted) tensors.
    """

    name: str = "balanced"
    frac_mlp: float = 0.50
    frac_attn: float = 0.60
    t: float = 0.5
    mode: str = "combined"
    seed: int = 0
    restore_end: str = "top"

    def __post_init__(self):
        check_unit_interval(self.frac_mlp, "frac_mlp")
        check_unit_interval(self.frac_attn, "frac_attn")
        check_unit_interval(self.t, "t")
        check_choice(self.mode, "mode", SELECTION_MODES)
        check_choice(self.restore_end, "restore_end", RESTORE_ENDS)
        if self.name in POLICY_PRESETS and (self.frac_mlp, self.frac_attn) != POLICY_PRESETS[self.name]:
            raise ValidationError(
                f"policy {self.name!r} fixes fractions {POLICY_PRESETS[self.name]}, "
                f"got ({self.frac_mlp}, {self.frac_attn}); use name='custom' to override"
            )
        if self.name not in POLICY_PRESETS and self.name != "custom":
            raise ValidationError(f"unknown policy name {self.name!r}")

    @classmethod
    def preset(cls, name: str, **overrides) -> "Policy":
        if name not in POLICY_PRESETS:
            raise ValidationError(f"unknown policy preset {name!r}; choose from {sorted(POLICY_PRESETS)}")
        frac_mlp, frac_attn = POLICY_PRESETS[name]
        return cls(name=name, frac_mlp=frac_mlp, frac_attn=frac_attn, **overrides)

    @classmethod
    def custom(cls, frac_mlp: float, frac_attn: float, **overrides) -> "Policy":
        return cls(name="custom", frac_mlp=frac_mlp, frac_attn=frac_attn, **overrides)

    def with_config(self, frac_mlp=None, frac_attn=None, t=None) -> "Policy":
        """Copy with overridden search dimensions (becomes a custom policy)."""
        return replace(
            self,
            name="custom",
            frac_mlp=self.frac_mlp if frac_mlp is None else frac_mlp,
            frac_attn=self.frac_attn if frac_attn is None else frac_attn,
            t=self.t if t is None else t,
        )


@dataclass
class PlanEntry:
    name: str
    layer: int | None
    component: ComponentKind
    fused_score: float
    rank_in_group: int
    restore: bool
    t: float


@dataclass
class MergePlan:
    """The complete, serializable merge decision (one entry per scored tensor)."""

    entries: list[PlanEntry]
    policy: Policy
    config_digest: str = ""

    def restored_names(self) -> list[str]:
        return [e.name for e in self.entries if e.restore]


def selection_count(frac: float, group_size: int) -> int:
    """Half-up rounding of a fractional selection: floor(frac * G + 0.5)."""
    return int(math.floor(frac * group_size + 0.5))


def rank_group(rows: Sequence[tuple[ParamLocator, float]]) -> list[tuple[ParamLocator, float, int]]:
    """Order by descending score, ties by (ascending layer, then name); ranks 1..G."""
    def key(item: tuple[ParamLocator, float]):
        loc, score = item
        return (-score, loc.layer is None, loc.layer if loc.layer is not None else 0, loc.name)

    ordered = sorted(rows, key=key)
    return [(loc, score, rank) for rank, (loc, score) in enumerate(ordered, start=1)]


def _selection_scores(group_rows: Sequence[ScoredRow], mode: str) -> np.ndarray:
    if mode in ("combined", "random"):
        return np.array([r.fused for r in group_rows])
    attr = {"swci_only": "swci", "svdr_only": "svdr", "snr_only": "snr"}[mode]
    return minmax_normalize(np.array([getattr(r.metrics, attr) for r in group_rows]))


def build_plan(scored: Iterable[ScoredRow], policy: Policy) -> MergePlan:
    """Turn scored rows into restore decisions per the policy.

    Non-random modes restore the top-N (or bottom-N) entries of each group's
    ranking; random mode draws N entries per group from a generator seeded by
    (policy seed, group). The interpolation coefficient is quantized to 9
    significant digits so a plan re-read from JSON reproduces the same merge.
    """
    rows = list(scored)
    if not rows:
        raise ValidationError("build_plan: no scored rows")

    groups: dict[ComponentKind, list[ScoredRow]] = {}
    for row in rows:
        groups.setdefault(row.locator.component, []).append(row)

    t_value = round9(policy.t)
    frac_for = {MacroGroup.MLP: policy.frac_mlp, MacroGroup.ATTENTION: policy.frac_attn}
    entries: list[PlanEntry] = []
    kind_order = {kind: i for i, kind in enumerate(ComponentKind)}

    for kind in sorted(groups, key=kind_order.__getitem__):
        group_rows = groups[kind]
        scores = _selection_scores(group_rows, policy.mode)
        ranked = rank_group([(r.locator, float(s)) for r, s in zip(group_rows, scores)])
        macro = macro_group(kind)
        size = len(group_rows)

        if macro is MacroGroup.OTHER:
            n_restore = 0
        else:
            n_restore = selection_count(frac_for[macro], size)

        if policy.mode == "random" and n_restore > 0:
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=int(policy.seed), spawn_key=(kind_order[kind],))
            )
            chosen = set(rng.choice(size, size=n_restore, replace=False).tolist())
            restore_ranks = {rank for i, (_, _, rank) in enumerate(ranked) if i in chosen}
        elif policy.restore_end == "top":
            restore_ranks = set(range(1, n_restore + 1))
        else:
            restore_ranks = set(range(size - n_restore + 1, size + 1))

        fused_by_name = {r.locator.name: r.fused for r in group_rows}
        for loc, _, rank in ranked:
            entries.append(
                PlanEntry(
                    name=loc.name,
                    layer=loc.layer,
                    component=loc.component,
                    fused_score=float(fused_by_name[loc.name]),
                    rank_in_group=rank,
                    restore=rank in restore_ranks,
                    t=t_value,
                )
            )

    entries.sort(key=lambda e: (kind_order[e.component], e.layer is None, e.layer or 0, e.name))
    plan = MergePlan(entries=entries, policy=policy)
    plan.config_digest = plan_digest(plan)
    return plan


def plan_digest(plan: MergePlan) -> str:
    """Stable content hash over (entries, policy) in canonical JSON."""
    return sha256_hex(canonical_dumps({"entries": plan.entries, "policy": plan.policy}))


def plan_to_dict(plan: MergePlan) -> dict:
    return {
        "policy": {
            "name": plan.policy.name,
            "frac_mlp": plan.policy.frac_mlp,
            "frac_attn": plan.policy.frac_attn,
            "t": plan.policy.t,
            "mode": plan.policy.mode,
            "seed": plan.policy.seed,
            "restore_end": plan.policy.restore_end,
        },
        "entries": [
            {
                "name": e.name,
                "layer": e.layer,
                "component": e.component.value,
                "fused_score": e.fused_score,
                "rank_in_group": e.rank_in_group,
                "restore": e.restore,
                "t": e.t,
            }
            for e in plan.entries
        ],
        "config_digest": plan.config_digest,
    }


def write_plan(plan: MergePlan, path: str | Path) -> None:
    Path(path).write_text(canonical_dumps(plan_to_dict(plan)) + "\n", encoding="utf-8")


def read_plan(path: str | Path) -> MergePlan:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"plan {path}: not valid JSON ({exc})") from exc
    try:
        policy = Policy(**raw["policy"])
        entries = [
            PlanEntry(
                name=e["name"],
                layer=e["layer"],
                component=ComponentKind(e["component"]),
                fused_score=float(e["fused_score"]),
                rank_in_group=int(e["rank_in_group"]),
                restore=bool(e["restore"]),
                t=float(e["t"]),
            )
            for e in raw["entries"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"plan {path}: malformed ({exc})") from exc
    plan = MergePlan(entries=entries, policy=policy)
    plan.config_digest = plan_digest(plan)
    return plan
