"""Checkpoint reading/writing in the safetensors single-file layout.

Layout: 8 bytes little-endian u64 header length N, then N bytes of UTF-8 JSON
mapping tensor name -> {dtype, shape, data_offsets} (plus optional
"__metadata__"), then the raw little-endian tensor payload. Supported dtypes
are F32, F16, and BF16; everything is decoded to float32 in memory.

Writers emit tensors in lexicographic name order with contiguous offsets and a
space-padded header, so saving the same checkpoint twice produces
byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import AlignmentError, CheckpointFormatError, ValidationError
from .serialize import sha256_hex

_HEADER_DTYPES = {"F32": "f32", "F16": "f16", "BF16": "bf16"}
_TAG_TO_HEADER = {v: k for k, v in _HEADER_DTYPES.items()}
_ITEMSIZE = {"F32": 4, "F16": 2, "BF16": 2}


@dataclass(eq=False)
class TensorRecord:
    """A named weight tensor held as float32, remembering its stored dtype."""

    name: str
    shape: tuple[int, ...]
    dtype_tag: str  # one of {"f32", "f16", "bf16"}
    data: np.ndarray  # float32, C-order, shape == self.shape

    def __post_init__(self):
        self.shape = tuple(int(d) for d in self.shape)
        if len(self.shape) < 1 or any(d < 1 for d in self.shape):
            raise ValidationError(f"tensor {self.name!r}: shape {self.shape} must be positive")
        if self.dtype_tag not in _TAG_TO_HEADER:
            raise ValidationError(f"tensor {self.name!r}: unsupported dtype tag {self.dtype_tag!r}")
        self.data = np.ascontiguousarray(self.data, dtype=np.float32).reshape(self.shape)

    def as_matrix(self) -> np.ndarray:
        """Float64 2-D view for spectral analysis (1xN for non-matrix shapes)."""
        arr = self.data.astype(np.float64)
        if arr.ndim != 2:
            arr = arr.reshape(1, -1)
        return arr

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorRecord):
            return NotImplemented
        return (
            self.name == other.name
            and self.shape == other.shape
            and self.dtype_tag == other.dtype_tag
            and np.array_equal(self.data, other.data)
        )


@dataclass(eq=False)
class Checkpoint:
    """An ordered (lexicographic by name) collection of tensors plus metadata."""

    tensors: dict[str, TensorRecord] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        ordered: dict[str, TensorRecord] = {}
        for name in sorted(self.tensors):
            rec = self.tensors[name]
            if rec.name != name:
                raise ValidationError(f"tensor key {name!r} does not match record name {rec.name!r}")
            ordered[name] = rec
        self.tensors = ordered
        self.metadata = {str(k): str(v) for k, v in self.metadata.items()}

    @classmethod
    def from_records(cls, records: Iterable[TensorRecord], metadata: dict[str, str] | None = None) -> "Checkpoint":
        tensors: dict[str, TensorRecord] = {}
        for rec in records:
            if rec.name in tensors:
                raise ValidationError(f"duplicate tensor name {rec.name!r}")
            tensors[rec.name] = rec
        return cls(tensors=tensors, metadata=dict(metadata or {}))

    @property
    def names(self) -> list[str]:
        return list(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __getitem__(self, name: str) -> TensorRecord:
        return self.tensors[name]

    def __iter__(self) -> Iterator[TensorRecord]:
        return iter(self.tensors.values())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.names == other.names
            and self.metadata == other.metadata
            and all(self.tensors[n] == other.tensors[n] for n in self.tensors)
        )

    def content_digest(self) -> str:
        """Stable hash over the decoded float32 contents and metadata."""
        h_parts = []
        for rec in self:
            h_parts.append(
                sha256_hex(
                    rec.name.encode() + repr(rec.shape).encode() + rec.dtype_tag.encode() + rec.data.tobytes()
                )
            )
        meta = json.dumps(self.metadata, sort_keys=True)
        return sha256_hex("|".join(h_parts) + meta)


@dataclass
class Alignment:
    """Name-matched tensor pairs plus the names present on only one side."""

    pairs: list[tuple[TensorRecord, TensorRecord]]
    only_base: list[str]
    only_adapted: list[str]


def _decode_payload(dtype: str, raw: bytes) -> np.ndarray:
    if dtype == "F32":
        return np.frombuffer(raw, dtype="<f4").astype(np.float32)
    if dtype == "F16":
        return np.frombuffer(raw, dtype="<f2").astype(np.float32)
    # BF16: upper 16 bits of an IEEE-754 float32.
    bits = np.frombuffer(raw, dtype="<u2").astype(np.uint32) << 16
    return bits.view(np.float32).copy()


def _encode_payload(rec: TensorRecord, dtype: str) -> bytes:
    data = np.ascontiguousarray(rec.data, dtype="<f4")
    if dtype == "F32":
        return data.tobytes()
    if dtype == "F16":
        return data.astype("<f2").tobytes()  # numpy casts round-to-nearest-even
    # BF16 with round-to-nearest-even on the truncated mantissa bit.
    bits = data.view(np.uint32)
    rounded = (bits + 0x7FFF + ((bits >> 16) & 1)) >> 16
    return rounded.astype("<u2").tobytes()


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Parse a safetensors file into float32 records.

    Raises CheckpointFormatError on malformed headers, unsupported dtypes, or
    data spans that overlap, leave gaps, or run past the end of the file.
    """
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise CheckpointFormatError(f"{path}: file too short for a header length")
    header_len = int.from_bytes(blob[:8], "little")
    if 8 + header_len > len(blob):
        raise CheckpointFormatError(f"{path}: declared header length {header_len} exceeds file size")
    try:
        header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: header is not valid JSON ({exc})") from exc
    if not isinstance(header, dict):
        raise CheckpointFormatError(f"{path}: header must be a JSON object")

    metadata = header.pop("__metadata__", {})
    if not isinstance(metadata, dict):
        raise CheckpointFormatError(f"{path}: __metadata__ must be an object")

    data = blob[8 + header_len :]
    spans: list[tuple[int, int, str]] = []
    records: dict[str, TensorRecord] = {}
    for name, entry in header.items():
        if not isinstance(entry, dict):
            raise CheckpointFormatError(f"{path}: tensor {name!r}: entry must be an object")
        dtype = entry.get("dtype")
        if dtype not in _HEADER_DTYPES:
            raise CheckpointFormatError(f"{path}: tensor {name!r}: unsupported dtype {dtype!r}")
        shape = entry.get("shape")
        if (
            not isinstance(shape, list)
            or len(shape) < 1
            or not all(isinstance(d, int) and d >= 1 for d in shape)
        ):
            raise CheckpointFormatError(f"{path}: tensor {name!r}: bad shape {shape!r}")
        offsets = entry.get("data_offsets")
        if not (isinstance(offsets, list) and len(offsets) == 2):
            raise CheckpointFormatError(f"{path}: tensor {name!r}: bad data_offsets {offsets!r}")
        begin, end = int(offsets[0]), int(offsets[1])
        count = int(np.prod(shape))
        if begin < 0 or end < begin or end > len(data):
            raise CheckpointFormatError(
                f"{path}: tensor {name!r}: span [{begin}, {end}) outside data region of {len(data)} bytes"
            )
        if end - begin != count * _ITEMSIZE[dtype]:
            raise CheckpointFormatError(
                f"{path}: tensor {name!r}: span size {end - begin} does not match "
                f"shape {shape} of dtype {dtype}"
            )
        spans.append((begin, end, name))
        values = _decode_payload(dtype, data[begin:end])
        records[name] = TensorRecord(
            name=name, shape=tuple(shape), dtype_tag=_HEADER_DTYPES[dtype], data=values.reshape(shape)
        )

    # Spans must tile the data region exactly: no overlaps, no gaps.
    spans.sort()
    cursor = 0
    for begin, end, name in spans:
        if begin != cursor:
            kind = "overlaps previous span" if begin < cursor else "leaves a gap"
            raise CheckpointFormatError(f"{path}: tensor {name!r}: data span {kind}")
        cursor = end
    if cursor != len(data):
        raise CheckpointFormatError(f"{path}: {len(data) - cursor} trailing bytes after last tensor span")

    return Checkpoint(tensors=records, metadata={str(k): str(v) for k, v in metadata.items()})


def _check_name(name: str) -> None:
    if not name:
        raise CheckpointFormatError("tensor names must be non-empty")
    if name == "__metadata__":
        raise CheckpointFormatError("tensor name '__metadata__' collides with the metadata key")
    if any(ord(c) < 0x20 for c in name):
        raise CheckpointFormatError(f"tensor name {name!r} contains control characters")


def save_checkpoint(ckpt: Checkpoint, path: str | Path, dtype_policy: str = "force_f32") -> None:
    """Write a checkpoint; a pure function of (checkpoint, dtype_policy).

    ``force_f32`` stores every tensor as F32 (losslessly round-trips the
    in-memory float32 data); ``preserve`` re-quantizes to each record's
    original dtype with round-to-nearest-even.
    """
    if dtype_policy not in ("preserve", "force_f32"):
        raise ValidationError(f"dtype_policy must be 'preserve' or 'force_f32', got {dtype_policy!r}")

    header: dict[str, object] = {}
    if ckpt.metadata:
        header["__metadata__"] = dict(sorted(ckpt.metadata.items()))

    payloads: list[bytes] = []
    cursor = 0
    for rec in ckpt:  # lexicographic order
        _check_name(rec.name)
        dtype = "F32" if dtype_policy == "force_f32" else _TAG_TO_HEADER[rec.dtype_tag]
        payload = _encode_payload(rec, dtype)
        header[rec.name] = {
            "dtype": dtype,
            "shape": list(rec.shape),
            "data_offsets": [cursor, cursor + len(payload)],
        }
        payloads.append(payload)
        cursor += len(payload)

    header_bytes = json.dumps(header, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    if len(header_bytes) % 8:  # keep tensor data 8-byte aligned
        header_bytes += b" " * (8 - len(header_bytes) % 8)

    out = Path(path)
    with out.open("wb") as fh:
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        for payload in payloads:
            fh.write(payload)


def aligned_pairs(base: Checkpoint, adapted: Checkpoint) -> Alignment:
    """Match tensors by exact name; same-name shape mismatches are errors."""
    base_names = set(base.names)
    adapted_names = set(adapted.names)
    pairs = []
    mismatched = []
    for name in sorted(base_names & adapted_names):
        rb, ra = base[name], adapted[name]
        if rb.shape != ra.shape:
            mismatched.append(f"{name!r}: shape {rb.shape} vs {ra.shape}")
        else:
            pairs.append((rb, ra))
    if mismatched:
        raise AlignmentError("shape mismatch on " + "; ".join(mismatched))
    return Alignment(
        pairs=pairs,
        only_base=sorted(base_names - adapted_names),
        only_adapted=sorted(adapted_names - base_names),
    )
