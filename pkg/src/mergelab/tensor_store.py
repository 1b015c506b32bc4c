"""Checkpoint container: an ordered set of named little-endian tensors.

File layout::

    [0, 8)        header length N, little-endian u64
    [8, 8 + N)    JSON header {name: {"dtype", "shape", "data_offsets"}, "__metadata__": {...}}
    [8 + N, ...)  data region, offsets relative to its start

Files written here are canonical: entries sorted by name, data packed
gap-free in that order, JSON keys sorted with no whitespace and the header
space-padded to a multiple of 8 bytes. Parsing accepts any valid layout.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import os
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterator, Mapping

import numpy as np

from .exceptions import DuplicateName, MalformedHeader, OffsetError, UnknownTensor

__all__ = [
    "DType",
    "TensorMeta",
    "Checkpoint",
    "arch_fingerprint",
    "parse_checkpoint",
    "write_checkpoint",
    "tensor_values",
    "load_checkpoint",
    "save_checkpoint",
]

FINGERPRINT_KEY = "arch_fingerprint"
_METADATA_KEY = "__metadata__"
_ENTRY_KEYS = {"dtype", "shape", "data_offsets"}


class DType(str, enum.Enum):
    F32 = "F32"
    F64 = "F64"
    I64 = "I64"

    @property
    def itemsize(self) -> int:
        return 4 if self is DType.F32 else 8

    @property
    def numpy(self) -> np.dtype:
        return _NUMPY_DTYPES[self]

    @property
    def is_float(self) -> bool:
        return self is not DType.I64

    @classmethod
    def from_numpy(cls, dtype) -> "DType":
        dtype = np.dtype(dtype)
        if dtype.kind == "f" and dtype.itemsize == 4:
            return cls.F32
        if dtype.kind == "f" and dtype.itemsize == 8:
            return cls.F64
        if dtype.kind == "i" and dtype.itemsize == 8:
            return cls.I64
        raise TypeError(f"unsupported array dtype {dtype}; expected float32, float64 or int64")


_NUMPY_DTYPES = {"F32": np.dtype("<f4"), "F64": np.dtype("<f8"), "I64": np.dtype("<i8")}  # DType members hash as their str value


@dataclass(frozen=True)
class TensorMeta:
    name: str
    dtype: DType
    shape: tuple[int, ...]
    data_offsets: tuple[int, int]

    @property
    def numel(self) -> int:
        return math.prod(self.shape)

    @property
    def nbytes(self) -> int:
        return self.dtype.itemsize * self.numel


def arch_fingerprint(structure) -> str:
    """Hash of the sorted ``(name, dtype, shape)`` list; ignores values."""
    items = sorted((name, DType(dtype).value, [int(d) for d in shape]) for name, dtype, shape in structure)
    blob = json.dumps(items, separators=(",", ":")).encode("ascii")
    return hashlib.sha256(blob).hexdigest()


class Checkpoint:
    """Immutable, canonically ordered collection of tensors plus string metadata.

    The ``arch_fingerprint`` metadata entry is always recomputed from the
    tensor structure; a caller-supplied value is overwritten.
    """

    __slots__ = ("_entries", "_metadata", "_fingerprint", "_views")

    def __init__(self, entries: Mapping[str, tuple[DType, tuple[int, ...], bytes]], metadata=None):
        offset = 0
        ordered = {}
        for name in sorted(entries):
            dtype, shape, buf = entries[name]
            if not isinstance(name, str) or not name or name == _METADATA_KEY:
                raise ValueError(f"invalid tensor name {name!r}")
            dtype = DType(dtype)
            shape = tuple(int(d) for d in shape)
            if any(d < 0 for d in shape):
                raise ValueError(f"tensor {name!r}: negative dimension in shape {shape}")
            buf = bytes(buf)
            meta = TensorMeta(name, dtype, shape, (offset, offset + len(buf)))
            if len(buf) != meta.nbytes:
                raise ValueError(f"tensor {name!r}: buffer is {len(buf)} bytes, shape {shape} {dtype.value} needs {meta.nbytes}")
            ordered[name] = (meta, buf)
            offset += len(buf)
        self._entries = ordered
        self._views = {}
        self._fingerprint = arch_fingerprint((m.name, m.dtype, m.shape) for m, _ in ordered.values())
        md = {str(k): str(v) for k, v in (metadata or {}).items()}
        md[FINGERPRINT_KEY] = self._fingerprint
        self._metadata = MappingProxyType(dict(sorted(md.items())))

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], metadata=None) -> "Checkpoint":
        entries = {}
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            dtype = DType.from_numpy(arr.dtype)
            entries[name] = (dtype, arr.shape, np.ascontiguousarray(arr, dtype=dtype.numpy).tobytes())
        return cls(entries, metadata)

    # mapping-ish access
    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __contains__(self, name) -> bool:
        return name in self._entries

    @property
    def names(self) -> list[str]:
        return list(self._entries)

    @property
    def metadata(self) -> Mapping[str, str]:
        return self._metadata

    @property
    def fingerprint(self) -> str:
        return self._fingerprint

    @property
    def nbytes(self) -> int:
        return sum(m.nbytes for m, _ in self._entries.values())

    def meta(self, name: str) -> TensorMeta:
        try:
            return self._entries[name][0]
        except KeyError:
            raise UnknownTensor(f"no tensor named {name!r}") from None

    def buffer(self, name: str) -> bytes:
        try:
            return self._entries[name][1]
        except KeyError:
            raise UnknownTensor(f"no tensor named {name!r}") from None

    def array(self, name: str) -> np.ndarray:
        """Read-only view of a tensor in its stored dtype and shape."""
        view = self._views.get(name)
        if view is None:
            meta = self.meta(name)
            # buffers are immutable bytes, so the view is read-only and safe to share
            view = self._views[name] = np.frombuffer(self.buffer(name), dtype=meta.dtype.numpy).reshape(meta.shape)
        return view

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {name: self.array(name).copy() for name in self._entries}

    def structure(self) -> list[tuple[str, DType, tuple[int, ...]]]:
        return [(m.name, m.dtype, m.shape) for m, _ in self._entries.values()]

    def replace(self, arrays=None, metadata=None) -> "Checkpoint":
        """Copy with some tensors and/or the whole metadata map replaced."""
        entries = {name: (m.dtype, m.shape, buf) for name, (m, buf) in self._entries.items()}
        for name, arr in (arrays or {}).items():
            arr = np.asarray(arr)
            dtype = DType.from_numpy(arr.dtype)
            entries[name] = (dtype, arr.shape, np.ascontiguousarray(arr, dtype=dtype.numpy).tobytes())
        return Checkpoint(entries, self._metadata if metadata is None else metadata)

    def _with_arrays(self, arrays: Mapping[str, np.ndarray], metadata) -> "Checkpoint":
        """Same structure, new values: skips re-validation and re-hashing.

        ``arrays`` must hold every tensor with its existing dtype and shape.
        """
        entries = {}
        for name, (meta, _) in self._entries.items():
            arr = arrays[name]
            if arr.shape != meta.shape:
                raise ValueError(f"tensor {name!r}: shape {arr.shape} does not match {meta.shape}")
            entries[name] = (meta, np.ascontiguousarray(arr, dtype=meta.dtype.numpy).tobytes())
        if len(arrays) != len(entries):
            raise ValueError("arrays do not cover the same tensors")
        out = object.__new__(Checkpoint)
        out._entries = entries
        out._views = {}
        out._fingerprint = self._fingerprint
        md = {str(k): str(v) for k, v in metadata.items()}
        md[FINGERPRINT_KEY] = self._fingerprint
        out._metadata = MappingProxyType(dict(sorted(md.items())))
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return self._entries == other._entries and dict(self._metadata) == dict(other._metadata)

    def __hash__(self):
        return hash((self._fingerprint, tuple(buf for _, buf in self._entries.values())))

    def __repr__(self) -> str:
        return f"Checkpoint({len(self)} tensors, {self.nbytes} bytes, fingerprint={self._fingerprint[:12]})"


def _reject_duplicates(pairs):
    out = {}
    for key, value in pairs:
        if key in out:
            raise DuplicateName(f"duplicate key {key!r} in header")
        out[key] = value
    return out


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def parse_checkpoint(data: bytes) -> Checkpoint:
    data = bytes(data)
    if len(data) < 8:
        raise MalformedHeader(f"file is {len(data)} bytes; need at least 8 for the header length")
    n = int.from_bytes(data[:8], "little")
    if n > len(data) - 8:
        raise MalformedHeader(f"header length {n} exceeds file size {len(data)}")
    try:
        header = json.loads(data[8 : 8 + n].decode("utf-8"), object_pairs_hook=_reject_duplicates)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeader(f"header is not valid JSON: {exc}") from None
    if not isinstance(header, dict):
        raise MalformedHeader("header must be a JSON object")

    metadata = header.pop(_METADATA_KEY, {})
    if not isinstance(metadata, dict) or not all(isinstance(v, str) for v in metadata.values()):
        raise MalformedHeader("__metadata__ must map strings to strings")

    region = data[8 + n :]
    metas = []
    for name, entry in header.items():
        if not name:
            raise MalformedHeader("empty tensor name")
        if not isinstance(entry, dict) or set(entry) != _ENTRY_KEYS:
            raise MalformedHeader(f"tensor {name!r}: entry must have exactly the keys {sorted(_ENTRY_KEYS)}")
        try:
            dtype = DType(entry["dtype"])
        except ValueError:
            raise MalformedHeader(f"tensor {name!r}: unknown dtype {entry['dtype']!r}") from None
        shape, offsets = entry["shape"], entry["data_offsets"]
        if not isinstance(shape, list) or not all(_is_int(d) and d >= 0 for d in shape):
            raise MalformedHeader(f"tensor {name!r}: shape must be a list of non-negative integers")
        if not (isinstance(offsets, list) and len(offsets) == 2 and all(_is_int(o) for o in offsets)):
            raise MalformedHeader(f"tensor {name!r}: data_offsets must be [begin, end]")
        begin, end = offsets
        meta = TensorMeta(name, dtype, tuple(shape), (begin, end))
        if begin < 0 or end < begin:
            raise OffsetError(f"tensor {name!r}: invalid range [{begin}, {end})")
        if end - begin != meta.nbytes:
            raise OffsetError(f"tensor {name!r}: range [{begin}, {end}) holds {end - begin} bytes, expected {meta.nbytes}")
        if end > len(region):
            raise OffsetError(f"tensor {name!r}: range [{begin}, {end}) exceeds data region of {len(region)} bytes")
        metas.append(meta)

    expected = 0
    for meta in sorted(metas, key=lambda m: m.data_offsets):
        begin, end = meta.data_offsets
        if begin < expected:
            raise OffsetError(f"tensor {meta.name!r}: range [{begin}, {end}) overlaps previous tensor ending at {expected}")
        if begin > expected:
            raise OffsetError(f"tensor {meta.name!r}: gap of {begin - expected} bytes before offset {begin}")
        expected = end
    if expected != len(region):
        raise OffsetError(f"{len(region) - expected} trailing bytes after last tensor")

    cp = Checkpoint(
        {m.name: (m.dtype, m.shape, region[m.data_offsets[0] : m.data_offsets[1]]) for m in metas},
        metadata,
    )
    stored = metadata.get(FINGERPRINT_KEY)
    if stored is not None and stored != cp.fingerprint:
        raise MalformedHeader(f"stored arch_fingerprint {stored[:12]}... does not match tensors ({cp.fingerprint[:12]}...)")
    return cp


def write_checkpoint(cp: Checkpoint) -> bytes:
    header = {}
    for name in cp:
        meta = cp.meta(name)
        header[name] = {"dtype": meta.dtype.value, "shape": list(meta.shape), "data_offsets": list(meta.data_offsets)}
    header[_METADATA_KEY] = dict(cp.metadata)
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("ascii")
    text += b" " * (-len(text) % 8)
    return len(text).to_bytes(8, "little") + text + b"".join(cp.buffer(name) for name in cp)


def tensor_values(cp: Checkpoint, name: str) -> np.ndarray:
    """Flat copy of a tensor widened to float64 (or int64 for I64)."""
    arr = cp.array(name).reshape(-1)
    return arr.astype(np.float64 if cp.meta(name).dtype.is_float else np.int64)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())


def save_checkpoint(cp: Checkpoint, path) -> None:
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(write_checkpoint(cp))
    os.replace(tmp, path)
