"""Named f32 tensors and the ``.wstore`` container.

File layout::

    bytes 0..8        little-endian uint64 N
    bytes 8..8+N      UTF-8 JSON manifest
    bytes 8+N..       blob: little-endian f32, row-major, entries packed in
                      manifest order

Manifest::

    {"entries": [{"name", "shape", "dtype": "f32", "role", "offset", "nbytes"
                  [, "meta": {str: str}]}, ...],
     "metadata": {str: str}}

``offset`` is relative to the start of the blob. ``meta`` is written only for
entries that carry per-entry metadata (SVD factors record their original conv
shape there).
"""
from __future__ import annotations

import json
import math
import os
import struct
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import (
    BlobLengthMismatchError,
    MalformedManifestError,
    ShapeError,
    StoreError,
    TruncatedBlobError,
    TruncatedHeaderError,
    UnsupportedDtypeError,
)

ROLES = ("conv-weight", "bias", "other", "svd-factor")
_HEADER = struct.Struct("<Q")
_F32LE = np.dtype("<f4")


def as_tensor(data, shape=None) -> np.ndarray:
    """Return a read-only, C-contiguous float32 copy of ``data``.

    Enforces rank >= 1 and every dimension >= 1. ``shape`` reshapes flat data.
    """
    arr = np.array(data, dtype=np.float32, order="C", copy=True)
    if shape is not None:
        shape = tuple(int(d) for d in shape)
        if arr.size != math.prod(shape):
            raise ShapeError(f"data length {arr.size} does not match shape {list(shape)}")
        arr = arr.reshape(shape)
    if arr.ndim < 1:
        raise ShapeError("tensor rank must be at least 1")
    if any(d < 1 for d in arr.shape):
        raise ShapeError(f"tensor dimensions must be >= 1, got {list(arr.shape)}")
    arr.setflags(write=False)
    return arr


def _check_name(name: str) -> None:
    if not isinstance(name, str) or not name:
        raise StoreError("tensor names must be nonempty strings")
    if any(unicodedata.category(ch) == "Cc" for ch in name):
        raise StoreError(f"tensor name {name!r} contains control characters")


def _check_str_map(d: Mapping, what: str) -> dict[str, str]:
    out = {}
    for k, v in d.items():
        if not isinstance(k, str) or not isinstance(v, str):
            raise StoreError(f"{what} must map str to str, got {k!r}: {v!r}")
        out[k] = v
    return out


@dataclass(frozen=True, eq=False)
class Entry:
    name: str
    tensor: np.ndarray
    role: str = "other"
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        _check_name(self.name)
        if self.role not in ROLES:
            raise StoreError(f"{self.name}: unknown role {self.role!r}")
        t = self.tensor
        if not (isinstance(t, np.ndarray) and t.dtype == np.float32
                and t.flags.c_contiguous and not t.flags.writeable):
            t = as_tensor(t)
        if self.role == "conv-weight" and t.ndim != 4:
            raise ShapeError(f"{self.name}: conv-weight requires a rank-4 shape, got {list(t.shape)}")
        object.__setattr__(self, "tensor", t)
        object.__setattr__(self, "meta", MappingProxyType(_check_str_map(self.meta, "entry meta")))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.shape

    @property
    def numel(self) -> int:
        return int(self.tensor.size)

    def same_as(self, other: "Entry") -> bool:
        """Bitwise equality (``-0.0 != +0.0``, NaN payloads compared as bits)."""
        return (
            self.name == other.name
            and self.role == other.role
            and dict(self.meta) == dict(other.meta)
            and self.tensor.shape == other.tensor.shape
            and self.tensor.tobytes() == other.tensor.tobytes()
        )


class WeightStore:
    """Ordered, immutable collection of named tensors plus string metadata.

    Entries may be given as :class:`Entry` objects or ``(name, tensor[, role])``
    tuples. Equality is bitwise over names, roles, shapes, data and metadata.
    """

    def __init__(self, entries: Iterable = (), metadata: Mapping[str, str] | None = None):
        items = []
        seen = set()
        for e in entries:
            if not isinstance(e, Entry):
                e = Entry(*e)
            if e.name in seen:
                raise StoreError(f"duplicate tensor name {e.name!r}")
            seen.add(e.name)
            items.append(e)
        self._entries = tuple(items)
        self._index = {e.name: i for i, e in enumerate(items)}
        self._metadata = MappingProxyType(_check_str_map(metadata or {}, "metadata"))

    @property
    def entries(self) -> tuple[Entry, ...]:
        return self._entries

    @property
    def metadata(self) -> Mapping[str, str]:
        return self._metadata

    @property
    def names(self) -> list[str]:
        return [e.name for e in self._entries]

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[Entry]:
        return iter(self._entries)

    def __contains__(self, name) -> bool:
        return name in self._index

    def entry(self, name: str) -> Entry:
        try:
            return self._entries[self._index[name]]
        except KeyError:
            raise KeyError(f"no tensor named {name!r} in store") from None

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entry(name).tensor

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightStore):
            return NotImplemented
        return (
            len(self) == len(other)
            and dict(self.metadata) == dict(other.metadata)
            and list(self.metadata) == list(other.metadata)
            and all(a.same_as(b) for a, b in zip(self, other))
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"WeightStore({len(self)} tensors, {self.numel()} elements)"

    def numel(self) -> int:
        return sum(e.numel for e in self._entries)

    def without(self, name: str) -> "WeightStore":
        self.entry(name)
        return WeightStore([e for e in self._entries if e.name != name], self._metadata)

    def with_metadata(self, **updates: str) -> "WeightStore":
        md = dict(self._metadata)
        md.update(updates)
        return WeightStore(self._entries, md)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _manifest_bytes(store: WeightStore) -> bytes:
    entries = []
    offset = 0
    for e in store:
        nbytes = 4 * e.numel
        rec = {
            "name": e.name,
            "shape": [int(d) for d in e.shape],
            "dtype": "f32",
            "role": e.role,
            "offset": offset,
            "nbytes": nbytes,
        }
        if e.meta:
            rec["meta"] = dict(e.meta)
        entries.append(rec)
        offset += nbytes
    manifest = {"entries": entries, "metadata": dict(store.metadata)}
    return json.dumps(manifest, ensure_ascii=False, separators=(",", ":"),
                      allow_nan=False).encode("utf-8")


def encode_store(store: WeightStore) -> bytes:
    manifest = _manifest_bytes(store)
    parts = [_HEADER.pack(len(manifest)), manifest]
    parts.extend(e.tensor.astype(_F32LE, copy=False).tobytes() for e in store)
    return b"".join(parts)


def serialized_size(store: WeightStore) -> int:
    """Byte count :func:`save_store` would write, without writing."""
    return _HEADER.size + len(_manifest_bytes(store)) + 4 * store.numel()


def save_store(store: WeightStore, path) -> int:
    """Write ``store`` to ``path`` and return the number of bytes written.

    The byte count is the weight-size metric used in compression reports.
    """
    data = encode_store(store)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return len(data)


def decode_store(data: bytes) -> WeightStore:
    if len(data) < _HEADER.size:
        raise TruncatedHeaderError(f"truncated header: {len(data)} bytes, need {_HEADER.size}")
    (n,) = _HEADER.unpack_from(data, 0)
    if _HEADER.size + n > len(data):
        raise TruncatedHeaderError(
            f"truncated header: manifest length {n} exceeds file ({len(data) - _HEADER.size} bytes left)"
        )
    raw = data[_HEADER.size:_HEADER.size + n]
    try:
        manifest = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedManifestError(f"malformed manifest JSON: {exc}") from None
    if not isinstance(manifest, dict) or not isinstance(manifest.get("entries"), list):
        raise MalformedManifestError("malformed manifest: missing 'entries' list")
    metadata = manifest.get("metadata", {})
    if not isinstance(metadata, dict):
        raise MalformedManifestError("malformed manifest: 'metadata' must be an object")

    blob = memoryview(data)[_HEADER.size + n:]
    entries = []
    expected = 0
    for i, rec in enumerate(manifest["entries"]):
        try:
            name, shape, dtype = rec["name"], rec["shape"], rec["dtype"]
            role, offset, nbytes = rec["role"], rec["offset"], rec["nbytes"]
        except (KeyError, TypeError):
            raise MalformedManifestError(f"malformed manifest: entry {i} lacks required keys") from None
        if dtype != "f32":
            raise UnsupportedDtypeError(f"unsupported dtype {dtype!r} for entry {name!r}")
        if (not isinstance(shape, list) or not shape
                or not all(isinstance(d, int) and not isinstance(d, bool) and d >= 1 for d in shape)):
            raise MalformedManifestError(f"malformed manifest: bad shape {shape!r} for {name!r}")
        if not all(isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in (offset, nbytes)):
            raise MalformedManifestError(f"malformed manifest: bad offset/nbytes for {name!r}")
        count = math.prod(shape)
        if nbytes != 4 * count or offset != expected:
            raise BlobLengthMismatchError(
                f"manifest/blob length mismatch at {name!r}: offset {offset} nbytes {nbytes}, "
                f"expected offset {expected} nbytes {4 * count}"
            )
        if offset + nbytes > len(blob):
            raise TruncatedBlobError(
                f"truncated blob: {name!r} needs bytes {offset}..{offset + nbytes}, blob has {len(blob)}"
            )
        arr = np.frombuffer(blob, dtype=_F32LE, count=count, offset=offset)
        meta = rec.get("meta", {})
        try:
            entries.append(Entry(name, as_tensor(arr.astype(np.float32), shape), role, meta))
        except (StoreError, ShapeError) as exc:
            raise MalformedManifestError(f"malformed manifest: {exc}") from None
        expected = offset + nbytes
    if expected != len(blob):
        raise BlobLengthMismatchError(
            f"manifest/blob length mismatch: manifest covers {expected} bytes, blob has {len(blob)}"
        )
    try:
        return WeightStore(entries, metadata)
    except StoreError as exc:
        raise MalformedManifestError(f"malformed manifest: {exc}") from None


def load_store(path) -> WeightStore:
    with open(path, "rb") as fh:
        return decode_store(fh.read())


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TensorStats:
    element_count: int
    nonzero_count: int
    l1_sum: float
    min: float
    max: float
    nonfinite_count: int = 0

    @property
    def nonzero_fraction(self) -> float:
        return self.nonzero_count / self.element_count if self.element_count else 0.0


def tensor_stats(t) -> TensorStats:
    """Exact counts plus a correctly rounded float64 L1 sum.

    Nonzero means the value is neither +0.0 nor -0.0. NaN/Inf are counted in
    ``nonfinite_count``; min/max then follow numpy's NaN-propagating rules.
    """
    a = np.asarray(t, dtype=np.float32).ravel()
    if a.size == 0:
        return TensorStats(0, 0, 0.0, 0.0, 0.0)
    a64 = a.astype(np.float64)
    return TensorStats(
        element_count=int(a.size),
        nonzero_count=int(np.count_nonzero(a)),
        l1_sum=math.fsum(np.abs(a64).tolist()),
        min=float(a64.min()),
        max=float(a64.max()),
        nonfinite_count=int(a.size - np.count_nonzero(np.isfinite(a))),
    )
