"""Tensor-name classification: map checkpoint keys to (layer, component).

Importance scores are ranked within component groups (each attention
projection and each MLP projection forms its own group across layers), so the
planner needs a reliable name -> role mapping. A built-in profile covers
LLaMA-style naming; other architectures supply a JSON profile.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import ValidationError


class ComponentKind(str, enum.Enum):
    Q_PROJ = "q_proj"
    K_PROJ = "k_proj"
    V_PROJ = "v_proj"
    O_PROJ = "o_proj"
    MLP_GATE = "mlp_gate"
    MLP_UP = "mlp_up"
    MLP_DOWN = "mlp_down"
    EMBEDDING = "embedding"
    NORM = "norm"
    HEAD = "head"
    OTHER = "other"


class MacroGroup(str, enum.Enum):
    ATTENTION = "attention"
    MLP = "mlp"
    OTHER = "other"


ATTENTION_KINDS = (
    ComponentKind.Q_PROJ,
    ComponentKind.K_PROJ,
    ComponentKind.V_PROJ,
    ComponentKind.O_PROJ,
)
MLP_KINDS = (ComponentKind.MLP_GATE, ComponentKind.MLP_UP, ComponentKind.MLP_DOWN)

#: The per-layer kinds shown as heatmap rows, in display order.
LAYERED_KINDS = ATTENTION_KINDS + MLP_KINDS


def macro_group(kind: ComponentKind) -> MacroGroup:
    if kind in ATTENTION_KINDS:
        return MacroGroup.ATTENTION
    if kind in MLP_KINDS:
        return MacroGroup.MLP
    return MacroGroup.OTHER


@dataclass(frozen=True)
class ParamLocator:
    """Parsed identity of a tensor inside a transformer checkpoint."""

    name: str
    layer: int | None
    component: ComponentKind

    def sort_key(self) -> tuple:
        # Layered tensors first, ordered by layer then name.
        return (self.layer is None, self.layer if self.layer is not None else 0, self.name)


@dataclass(frozen=True)
class ProfileRule:
    pattern: str
    component: ComponentKind

    def compiled(self) -> re.Pattern:
        return re.compile(self.pattern)


class ArchProfile:
    """Ordered list of anchored regex rules; the first match wins.

    A rule's first capture group, when present, is the decimal layer index.
    Names matching no rule fall through to ``other``.
    """

    def __init__(self, rules: Iterable[ProfileRule]):
        self.rules = list(rules)
        self._compiled = [(r.compiled(), r.component) for r in self.rules]

    @classmethod
    def llama(cls) -> "ArchProfile":
        rules = [
            ProfileRule(r"model\.layers\.(\d+)\.self_attn\.q_proj\.weight", ComponentKind.Q_PROJ),
            ProfileRule(r"model\.layers\.(\d+)\.self_attn\.k_proj\.weight", ComponentKind.K_PROJ),
            ProfileRule(r"model\.layers\.(\d+)\.self_attn\.v_proj\.weight", ComponentKind.V_PROJ),
            ProfileRule(r"model\.layers\.(\d+)\.self_attn\.o_proj\.weight", ComponentKind.O_PROJ),
            ProfileRule(r"model\.layers\.(\d+)\.mlp\.gate_proj\.weight", ComponentKind.MLP_GATE),
            ProfileRule(r"model\.layers\.(\d+)\.mlp\.up_proj\.weight", ComponentKind.MLP_UP),
            ProfileRule(r"model\.layers\.(\d+)\.mlp\.down_proj\.weight", ComponentKind.MLP_DOWN),
            ProfileRule(
                r"model\.layers\.(\d+)\.(?:input_layernorm|post_attention_layernorm)\.weight",
                ComponentKind.NORM,
            ),
            ProfileRule(r"model\.embed_tokens\.weight", ComponentKind.EMBEDDING),
            ProfileRule(r"model\.norm\.weight", ComponentKind.NORM),
            ProfileRule(r"lm_head\.weight", ComponentKind.HEAD),
        ]
        return cls(rules)

    @classmethod
    def from_json(cls, path: str | Path) -> "ArchProfile":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"profile {path}: not valid JSON ({exc})") from exc
        if not isinstance(raw, list):
            raise ValidationError(f"profile {path}: expected a JSON array of rules")
        rules = []
        for i, item in enumerate(raw):
            if not isinstance(item, dict) or "pattern" not in item or "component" not in item:
                raise ValidationError(f"profile {path}: rule {i} needs 'pattern' and 'component'")
            try:
                component = ComponentKind(item["component"])
            except ValueError as exc:
                raise ValidationError(
                    f"profile {path}: rule {i} has unknown component {item['component']!r}"
                ) from exc
            try:
                re.compile(item["pattern"])
            except re.error as exc:
                raise ValidationError(f"profile {path}: rule {i} pattern invalid ({exc})") from exc
            rules.append(ProfileRule(item["pattern"], component))
        return cls(rules)


def classify(name: str, profile: ArchProfile) -> ParamLocator:
    """Deterministic name -> locator mapping; unmatched names become ``other``."""
    for regex, component in profile._compiled:
        m = regex.fullmatch(name)
        if m is None:
            continue
        layer = None
        if m.groups() and m.group(1) is not None:
            layer = int(m.group(1))
        return ParamLocator(name=name, layer=layer, component=component)
    return ParamLocator(name=name, layer=None, component=ComponentKind.OTHER)


def group_by_component(locators: Iterable[ParamLocator]) -> dict[ComponentKind, list[ParamLocator]]:
    """Partition locators by component, each group ordered by (layer, name)."""
    pool = list(locators)
    groups: dict[ComponentKind, list[ParamLocator]] = {}
    for kind in ComponentKind:
        bucket = [loc for loc in pool if loc.component is kind]
        if bucket:
            bucket.sort(key=ParamLocator.sort_key)
            groups[kind] = bucket
    return groups
