from __future__ import annotations

import numpy as np
import pytest

from spearmm.checkpoint_io import Checkpoint, TensorRecord
from spearmm.synth import SynthSpec, generate_pair


def make_record(name: str, values, dtype_tag: str = "f32") -> TensorRecord:
    arr = np.asarray(values, dtype=np.float32)
    return TensorRecord(name=name, shape=arr.shape, dtype_tag=dtype_tag, data=arr)


def make_checkpoint(tensors: dict[str, np.ndarray], metadata: dict[str, str] | None = None) -> Checkpoint:
    records = [make_record(name, values) for name, values in tensors.items()]
    return Checkpoint.from_records(records, metadata or {})


@pytest.fixture(scope="session")
def small_pair():
    """4-layer fixture with strong low-rank shifts in layers 0-1."""
    spec = SynthSpec(
        layers=4, hidden=32, seed=11,
        lowrank_rank=2, lowrank_scale=4.0, noise_scale=0.02,
        target_layers=(0, 1),
    )
    return generate_pair(spec)


@pytest.fixture(scope="session")
def full_layer_pair():
    """8-layer fixture perturbed on every layer and every projection."""
    spec = SynthSpec(
        layers=8, hidden=32, seed=5,
        lowrank_rank=2, lowrank_scale=3.0, noise_scale=0.05,
    )
    return generate_pair(spec)
