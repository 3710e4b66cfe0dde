"""Synthetic checkpoint pairs for tests and demos.

Generates a base checkpoint of seeded Gaussian tensors under LLaMA-style
naming, and an adapted twin where selected components/layers receive a planted
low-rank shift plus optional i.i.d. noise. The low-rank factors are
orthonormalized so each planted singular value equals ``lowrank_scale``
exactly, which makes spectra predictable in tests.

All randomness derives from the single spec seed through per-tensor
substreams keyed by the tensor's position in lexicographic name order, so
outputs are byte-deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .archmap import ArchProfile, ComponentKind, classify
from .checkpoint_io import Checkpoint, TensorRecord, save_checkpoint
from .errors import ValidationError

PROJECTION_KINDS = (
    ComponentKind.Q_PROJ,
    ComponentKind.K_PROJ,
    ComponentKind.V_PROJ,
    ComponentKind.O_PROJ,
    ComponentKind.MLP_GATE,
    ComponentKind.MLP_UP,
    ComponentKind.MLP_DOWN,
)


@dataclass(frozen=True)
class SynthSpec:
    layers: int = 8
    hidden: int = 64
    seed: int = 0
    lowrank_rank: int = 4
    lowrank_scale: float = 0.0
    noise_scale: float = 0.0
    target_components: tuple[ComponentKind, ...] = PROJECTION_KINDS
    target_layers: tuple[int, ...] | None = None  # None = every layer

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1:
            raise ValidationError("layers and hidden must be positive")
        if not 1 <= self.lowrank_rank <= self.hidden:
            raise ValidationError("need hidden >= lowrank_rank >= 1")


def _tensor_shapes(spec: SynthSpec) -> dict[str, tuple[int, ...]]:
    h = spec.hidden
    shapes: dict[str, tuple[int, ...]] = {
        "model.embed_tokens.weight": (2 * h, h),
        "lm_head.weight": (2 * h, h),
        "model.norm.weight": (h,),
    }
    for i in range(spec.layers):
        prefix = f"model.layers.{i}"
        for proj in ("q_proj", "k_proj", "v_proj", "o_proj"):
            shapes[f"{prefix}.self_attn.{proj}.weight"] = (h, h)
        for proj in ("gate_proj", "up_proj", "down_proj"):
            shapes[f"{prefix}.mlp.{proj}.weight"] = (h, h)
        shapes[f"{prefix}.input_layernorm.weight"] = (h,)
        shapes[f"{prefix}.post_attention_layernorm.weight"] = (h,)
    return shapes


def _rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(stream, index)))


def _is_target(name: str, spec: SynthSpec, profile: ArchProfile) -> bool:
    loc = classify(name, profile)
    if loc.component not in spec.target_components:
        return False
    if spec.target_layers is None:
        return True
    return loc.layer is not None and loc.layer in spec.target_layers


def _lowrank_shift(rng: np.random.Generator, shape: tuple[int, ...], rank: int, scale: float) -> np.ndarray:
    flat_shape = shape if len(shape) == 2 else (1, int(np.prod(shape)))
    m, n = flat_shape
    r = min(rank, m, n)
    left = np.linalg.qr(rng.standard_normal((m, r)))[0]
    right = np.linalg.qr(rng.standard_normal((n, r)))[0]
    return (scale * left @ right.T).reshape(shape)


def generate_pair(spec: SynthSpec) -> tuple[Checkpoint, Checkpoint]:
    """Build the (base, adapted) checkpoint pair a SynthSpec describes."""
    profile = ArchProfile.llama()
    shapes = _tensor_shapes(spec)
    std = 1.0 / np.sqrt(spec.hidden)

    base_records = []
    adapted_records = []
    for index, name in enumerate(sorted(shapes)):
        shape = shapes[name]
        values = _rng(spec.seed, 0, index).normal(0.0, std, size=shape)
        base_records.append(TensorRecord(name=name, shape=shape, dtype_tag="f32", data=values))

        adapted_values = values
        if _is_target(name, spec, profile) and (spec.lowrank_scale != 0.0 or spec.noise_scale != 0.0):
            perturb_rng = _rng(spec.seed, 1, index)
            adapted_values = values.copy()
            if spec.lowrank_scale != 0.0:
                adapted_values += _lowrank_shift(perturb_rng, shape, spec.lowrank_rank, spec.lowrank_scale)
            if spec.noise_scale != 0.0:
                adapted_values += spec.noise_scale * perturb_rng.standard_normal(shape)
        adapted_records.append(TensorRecord(name=name, shape=shape, dtype_tag="f32", data=adapted_values))

    return Checkpoint.from_records(base_records), Checkpoint.from_records(adapted_records)


def generate_files(spec: SynthSpec, base_path: str | Path, adapted_path: str | Path) -> None:
    base, adapted = generate_pair(spec)
    save_checkpoint(base, base_path, dtype_policy="force_f32")
    save_checkpoint(adapted, adapted_path, dtype_policy="force_f32")
