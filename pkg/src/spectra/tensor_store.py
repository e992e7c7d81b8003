"""Reading and writing checkpoints in the safetensors container layout.

Layout, bit-exact: bytes [0, 8) hold the header length N as a little-
endian u64; bytes [8, 8+N) are a UTF-8 JSON object mapping tensor names
to {"dtype", "shape", "data_offsets"}, plus an optional "__metadata__"
string map; the rest of the file is the concatenated row-major buffers,
with data_offsets relative to byte 8+N. Only F32 and F64 are accepted,
and every tensor is widened to float64 on load.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from fnmatch import fnmatchcase
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeMismatchError
from .linalg import WeightMatrix

_DTYPES = {"F32": np.dtype("<f4"), "F64": np.dtype("<f8")}


class SkippedTensorWarning(UserWarning):
    """A tensor was left out of layer matching (wrong rank)."""


@dataclass
class TensorRecord:
    """One named tensor: stored dtype, shape, and float64 data."""

    dtype: str
    shape: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        if self.dtype not in _DTYPES:
            raise FormatError(f"unsupported dtype {self.dtype!r}")
        if self.data.shape != tuple(self.shape):
            raise FormatError(f"element count does not match shape {self.shape}")


@dataclass
class CheckpointManifest:
    """Named collection of tensors plus optional string metadata."""

    entries: dict[str, TensorRecord] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    def add(self, name: str, array, dtype: str = "F64") -> None:
        arr = np.ascontiguousarray(np.asarray(array, dtype=float))
        if name in self.entries:
            raise FormatError(f"duplicate tensor name {name!r}")
        self.entries[name] = TensorRecord(dtype=dtype, shape=arr.shape, data=arr)

    def names(self) -> list[str]:
        return sorted(self.entries)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name].data

    def __contains__(self, name: str) -> bool:
        return name in self.entries


@dataclass(frozen=True)
class LayerPair:
    """The same layer before and after an update; shapes always agree."""

    name: str
    pre: WeightMatrix
    post: WeightMatrix


def read_checkpoint(path) -> CheckpointManifest:
    """Parse a checkpoint file into a manifest of float64 tensors.

    Raises FormatError on any structural problem: bad header length,
    invalid JSON, overlapping or out-of-bounds offsets, unsupported
    dtype, or a non-finite element (named in the message).
    """
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise FormatError(f"{path}: file too short for a header length")
    (header_len,) = struct.unpack("<Q", raw[:8])
    if header_len > len(raw) - 8:
        raise FormatError(f"{path}: header length {header_len} exceeds file size")

    def reject_duplicates(pairs):
        obj = dict(pairs)
        if len(obj) != len(pairs):
            raise FormatError(f"{path}: duplicate tensor name in header")
        return obj

    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"), object_pairs_hook=reject_duplicates)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: invalid JSON header: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header must be a JSON object")

    data = raw[8 + header_len :]
    manifest = CheckpointManifest()
    meta = header.pop("__metadata__", None)
    if meta is not None:
        if not isinstance(meta, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in meta.items()
        ):
            raise FormatError(f"{path}: __metadata__ must map strings to strings")
        manifest.metadata = dict(meta)

    spans: list[tuple[int, int, str]] = []
    for name, info in header.items():
        try:
            dtype = info["dtype"]
            shape = tuple(int(x) for x in info["shape"])
            begin, end = (int(x) for x in info["data_offsets"])
        except (TypeError, KeyError, ValueError) as exc:
            raise FormatError(f"{path}: malformed entry for tensor {name!r}") from exc
        if dtype not in _DTYPES:
            raise FormatError(f"{path}: tensor {name!r} has unsupported dtype {dtype!r}")
        if any(x < 0 for x in shape):
            raise FormatError(f"{path}: tensor {name!r} has a negative extent")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * _DTYPES[dtype].itemsize
        if begin < 0 or end > len(data) or end - begin != nbytes:
            raise FormatError(
                f"{path}: tensor {name!r} byte range [{begin}, {end}) is outside the data region "
                f"or does not match {count} x {dtype} elements"
            )
        spans.append((begin, end, name))
        values = np.frombuffer(data, dtype=_DTYPES[dtype], count=count, offset=begin)
        values = values.astype(np.float64).reshape(shape)
        if not np.all(np.isfinite(values)):
            raise FormatError(f"{path}: tensor {name!r} contains non-finite values")
        values.setflags(write=False)  # manifests are immutable after load
        manifest.entries[name] = TensorRecord(dtype=dtype, shape=shape, data=values)

    spans.sort()
    for (b0, e0, n0), (b1, e1, n1) in zip(spans, spans[1:]):
        if b1 < e0:
            raise FormatError(f"{path}: tensors {n0!r} and {n1!r} have overlapping ranges")
    return manifest


def write_checkpoint(manifest: CheckpointManifest, path, dtype: str = "F64") -> None:
    """Serialize a manifest; byte output is deterministic for a given
    manifest (names in lexicographic order, compact JSON)."""
    if dtype not in _DTYPES:
        raise FormatError(f"unsupported dtype {dtype!r}")
    np_dtype = _DTYPES[dtype]

    names = sorted(manifest.entries)
    header: dict[str, object] = {}
    if manifest.metadata:
        header["__metadata__"] = {k: manifest.metadata[k] for k in sorted(manifest.metadata)}
    buffers = []
    offset = 0
    for name in names:
        rec = manifest.entries[name]
        buf = np.ascontiguousarray(rec.data, dtype=np_dtype).tobytes()
        header[name] = {
            "dtype": dtype,
            "shape": list(rec.shape),
            "data_offsets": [offset, offset + len(buf)],
        }
        buffers.append(buf)
        offset += len(buf)

    blob = json.dumps(header, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for buf in buffers:
            fh.write(buf)


def match_layers(
    pre: CheckpointManifest,
    post: CheckpointManifest,
    pattern: str = "*",
    min_dim: int = 1,
) -> list[LayerPair]:
    """Pair up same-named rank-2 tensors from two manifests.

    Names must match the glob pattern and appear in both manifests with
    identical shapes (a shape conflict raises, naming the tensor).
    Non-rank-2 matches are skipped with a SkippedTensorWarning; rank-2
    tensors below min_dim in either dimension are skipped silently.
    Output is in lexicographic name order.
    """
    pairs = []
    for name in sorted(pre.entries):
        if not fnmatchcase(name, pattern) or name not in post.entries:
            continue
        a, b = pre.entries[name], post.entries[name]
        if a.shape != b.shape:
            raise ShapeMismatchError(
                f"tensor {name!r} has shape {a.shape} in one checkpoint and {b.shape} in the other"
            )
        if len(a.shape) != 2:
            warnings.warn(f"skipping {name!r}: rank {len(a.shape)} != 2", SkippedTensorWarning, stacklevel=2)
            continue
        if min(a.shape) < min_dim:
            continue
        pairs.append(
            LayerPair(
                name=name,
                pre=WeightMatrix(a.data, name=name),
                post=WeightMatrix(b.data, name=name),
            )
        )
    return pairs
