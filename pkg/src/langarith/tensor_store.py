"""Bit-exact reading, writing and validation of named-tensor containers.

The on-disk container is the de-facto "safetensors" layout: an 8-byte
little-endian unsigned header length ``N``, then ``N`` bytes of JSON mapping
tensor name to ``{"dtype", "shape", "data_offsets"}`` (plus an optional
``"__metadata__"`` string map), then the concatenated little-endian raw
tensor data addressed by the offsets.  Real adapter checkpoints therefore
load directly.

Writes are *canonical*: tensor names ascending lexicographic, metadata keys
sorted, compact JSON padded with spaces so the data section starts on an
8-byte boundary, and data laid out contiguously in name order.  Two maps
with equal entries always serialize to identical bytes.

In memory every tensor is held as FP32 regardless of its stored dtype;
FP16 is a storage format only.  Readers and writers move one tensor at a
time (with chunked FP16 conversion), so large checkpoints never need more
than one tensor's FP32 footprint per side of a transfer.
"""

from __future__ import annotations

import hashlib
import json
import struct
import sys
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ContainerFormatError, Fp16RangeError

__all__ = [
    "Dtype",
    "FP16_MAX",
    "TensorInfo",
    "TensorMap",
    "CompatReport",
    "CheckpointReader",
    "CheckpointWriter",
    "load_checkpoint",
    "save_checkpoint",
    "validate_compat",
]

FP16_MAX = 65504.0

_HEADER_LEN = struct.Struct("<Q")
_MAX_HEADER_BYTES = 100 * 2**20
_METADATA_KEY = "__metadata__"

# Elements per chunk when converting between storage and compute dtypes.
_CHUNK_ELEMS = 1 << 22


class Dtype(Enum):
    """Storage dtypes the container supports."""

    FP32 = "F32"
    FP16 = "F16"

    @property
    def itemsize(self) -> int:
        return 4 if self is Dtype.FP32 else 2

    @property
    def numpy(self) -> np.dtype:
        return np.dtype("<f4") if self is Dtype.FP32 else np.dtype("<f2")

    @classmethod
    def from_wire(cls, value: str, *, path=None, tensor=None) -> "Dtype":
        try:
            return cls(value)
        except ValueError:
            raise ContainerFormatError(
                f"unsupported dtype {value!r} (supported: F32, F16)",
                path=path,
                tensor=tensor,
            ) from None


@dataclass(frozen=True)
class TensorInfo:
    """Header-level description of one stored tensor."""

    name: str
    dtype: Dtype
    shape: tuple[int, ...]
    data_offsets: tuple[int, int]

    @property
    def num_elements(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1

    @property
    def nbytes(self) -> int:
        return self.num_elements * self.dtype.itemsize


def _validate_name(name) -> str:
    if not isinstance(name, str) or not name:
        raise ValueError(f"tensor name must be a nonempty string, got {name!r}")
    return name


def _validate_metadata(metadata) -> dict[str, str]:
    if metadata is None:
        return {}
    out = {}
    for k, v in dict(metadata).items():
        if not isinstance(k, str) or not isinstance(v, str):
            raise ValueError("metadata must map strings to strings")
        out[k] = v
    return out


class TensorMap(Mapping):
    """Immutable name-keyed collection of FP32 tensors plus provenance.

    Iteration order is always ascending lexicographic by name; that order
    is canonical for serialization, flattening and fingerprinting.  Arrays
    are read-only FP32 views; each entry remembers the dtype it is stored
    as on disk (``stored_dtype``).
    """

    __slots__ = ("_arrays", "_stored", "_metadata", "_fingerprint")

    def __init__(self, arrays, metadata=None, stored_dtypes=None):
        prepared: dict[str, np.ndarray] = {}
        stored: dict[str, Dtype] = {}
        for name, value in dict(arrays).items():
            _validate_name(name)
            src = np.asarray(value)
            if stored_dtypes is not None and name in stored_dtypes:
                stored[name] = Dtype(stored_dtypes[name])
            elif src.dtype == np.float16:
                stored[name] = Dtype.FP16
            else:
                stored[name] = Dtype.FP32
            arr = np.array(src, dtype=np.float32, order="C", copy=True)
            arr.flags.writeable = False
            prepared[name] = arr
        self._arrays = {k: prepared[k] for k in sorted(prepared)}
        self._stored = {k: stored[k] for k in self._arrays}
        self._metadata = _validate_metadata(metadata)
        self._fingerprint: str | None = None

    @classmethod
    def _from_owned(cls, arrays, metadata, stored_dtypes) -> "TensorMap":
        """Build from freshly-allocated C-contiguous FP32 arrays, no copy."""
        self = object.__new__(cls)
        # ufuncs collapse 0-d operands to scalars; rewrap without copying
        # actual arrays.
        ordered = {k: np.asarray(arrays[k], dtype=np.float32) for k in sorted(arrays)}
        for arr in ordered.values():
            arr.flags.writeable = False
        self._arrays = ordered
        self._stored = {k: stored_dtypes[k] for k in ordered}
        self._metadata = _validate_metadata(metadata)
        self._fingerprint = None
        return self

    # Mapping interface (canonical order).
    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._arrays)

    @property
    def metadata(self) -> dict[str, str]:
        return dict(self._metadata)

    def stored_dtype(self, name: str) -> Dtype:
        return self._stored[name]

    @property
    def num_elements(self) -> int:
        return sum(a.size for a in self._arrays.values())

    def fingerprint(self) -> str:
        """SHA-256 over names, shapes and FP32 content in canonical order.

        Storage dtype and metadata are deliberately excluded: arithmetic
        happens on the FP32 values, so an FP16-stored and an FP32-stored
        copy of the same values fingerprint identically.
        """
        if self._fingerprint is None:
            acc = FingerprintAccumulator()
            for name, arr in self._arrays.items():
                acc.add(name, arr)
            self._fingerprint = acc.hexdigest()
        return self._fingerprint

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorMap):
            return NotImplemented
        if self.names != other.names or self._metadata != other._metadata:
            return False
        for name in self.names:
            a, b = self._arrays[name], other._arrays[name]
            if self._stored[name] is not other._stored[name]:
                return False
            if a.shape != b.shape:
                return False
            if not np.array_equal(
                a.view(np.uint32), b.view(np.uint32)
            ):  # bitwise, NaN-safe
                return False
        return True

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"TensorMap({len(self)} tensors, {self.num_elements} elements)"


class FingerprintAccumulator:
    """Incremental content hash matching :meth:`TensorMap.fingerprint`."""

    def __init__(self):
        self._hash = hashlib.sha256()

    def add(self, name: str, fp32_array: np.ndarray) -> None:
        arr = np.asarray(fp32_array, dtype=np.float32)
        ndim, shape = arr.ndim, arr.shape
        if not arr.flags.c_contiguous:
            # note: promotes 0-d to 1-d, but 0-d arrays are always contiguous
            arr = np.ascontiguousarray(arr)
        if sys.byteorder != "little":  # pragma: no cover - LE hosts only in CI
            arr = arr.astype("<f4")
        h = self._hash
        h.update(name.encode("utf-8"))
        h.update(b"\x00")
        h.update(struct.pack("<I", ndim))
        if ndim:
            h.update(struct.pack(f"<{ndim}q", *shape))
        h.update(arr.data if arr.ndim else arr.tobytes())

    def hexdigest(self) -> str:
        return self._hash.hexdigest()


@dataclass(frozen=True)
class CompatReport:
    """Per-name discrepancies between two tensor maps.

    ``arithmetic_ok`` (identical name sets, matching shapes) is the gate
    for element-wise arithmetic; stored-dtype mismatches are reported but
    do not block arithmetic because compute is FP32 either way.
    """

    missing_in_a: tuple[str, ...] = ()
    missing_in_b: tuple[str, ...] = ()
    shape_mismatches: tuple[tuple[str, tuple[int, ...], tuple[int, ...]], ...] = ()
    dtype_mismatches: tuple[tuple[str, Dtype, Dtype], ...] = ()

    @property
    def is_empty(self) -> bool:
        return not (
            self.missing_in_a
            or self.missing_in_b
            or self.shape_mismatches
            or self.dtype_mismatches
        )

    @property
    def arithmetic_ok(self) -> bool:
        return not (self.missing_in_a or self.missing_in_b or self.shape_mismatches)

    def summary(self) -> str:
        parts = []
        if self.missing_in_a:
            parts.append(f"missing in a: {', '.join(self.missing_in_a)}")
        if self.missing_in_b:
            parts.append(f"missing in b: {', '.join(self.missing_in_b)}")
        for name, sa, sb in self.shape_mismatches:
            parts.append(f"shape mismatch {name}: {list(sa)} vs {list(sb)}")
        for name, da, db in self.dtype_mismatches:
            parts.append(f"stored dtype mismatch {name}: {da.value} vs {db.value}")
        return "; ".join(parts) if parts else "compatible"

    def to_dict(self) -> dict:
        return {
            "missing_in_a": list(self.missing_in_a),
            "missing_in_b": list(self.missing_in_b),
            "shape_mismatches": [
                {"name": n, "shape_a": list(a), "shape_b": list(b)}
                for n, a, b in self.shape_mismatches
            ],
            "dtype_mismatches": [
                {"name": n, "dtype_a": a.value, "dtype_b": b.value}
                for n, a, b in self.dtype_mismatches
            ],
            "arithmetic_ok": self.arithmetic_ok,
        }


def validate_compat(a: TensorMap, b: TensorMap) -> CompatReport:
    """List every name/shape/stored-dtype discrepancy between two maps."""
    names_a, names_b = set(a.names), set(b.names)
    shape_mm = []
    dtype_mm = []
    for name in sorted(names_a & names_b):
        if a[name].shape != b[name].shape:
            shape_mm.append((name, tuple(a[name].shape), tuple(b[name].shape)))
        if a.stored_dtype(name) is not b.stored_dtype(name):
            dtype_mm.append((name, a.stored_dtype(name), b.stored_dtype(name)))
    return CompatReport(
        missing_in_a=tuple(sorted(names_b - names_a)),
        missing_in_b=tuple(sorted(names_a - names_b)),
        shape_mismatches=tuple(shape_mm),
        dtype_mismatches=tuple(dtype_mm),
    )


def _parse_shape(raw, *, path, tensor) -> tuple[int, ...]:
    if not isinstance(raw, list) or any(
        not isinstance(d, int) or isinstance(d, bool) or d < 0 for d in raw
    ):
        raise ContainerFormatError(
            f"shape must be a list of nonnegative integers, got {raw!r}",
            path=path,
            tensor=tensor,
        )
    return tuple(raw)


def _reject_duplicate_keys(pairs):
    seen = set()
    out = {}
    for key, value in pairs:
        if key in seen:
            raise ContainerFormatError(f"duplicate tensor name {key!r} in header")
        seen.add(key)
        out[key] = value
    return out


class CheckpointReader:
    """Streaming reader: parses the header once, reads tensors on demand.

    Every tensor comes back as a freshly allocated FP32 array (FP16 data is
    upconverted chunk-wise, so peak memory per read stays at one FP32
    tensor plus a fixed chunk buffer).
    """

    def __init__(self, path):
        self.path = Path(path)
        self._file = open(self.path, "rb")
        try:
            self._infos, self._metadata = self._parse_header()
        except Exception:
            self._file.close()
            raise
        self._data_start = 8 + self._header_len

    def _parse_header(self):
        f = self._file
        f.seek(0, 2)
        file_size = f.tell()
        f.seek(0)
        head = f.read(8)
        if len(head) < 8:
            raise ContainerFormatError(
                "file too small for 8-byte header length", path=self.path
            )
        (header_len,) = _HEADER_LEN.unpack(head)
        if header_len > _MAX_HEADER_BYTES:
            raise ContainerFormatError(
                f"header length {header_len} exceeds sanity bound", path=self.path
            )
        if 8 + header_len > file_size:
            raise ContainerFormatError(
                f"header length {header_len} overruns file of {file_size} bytes",
                path=self.path,
            )
        self._header_len = header_len
        raw = f.read(header_len)
        try:
            header = json.loads(
                raw.decode("utf-8"), object_pairs_hook=_reject_duplicate_keys
            )
        except ContainerFormatError as exc:
            raise ContainerFormatError(str(exc), path=self.path) from None
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ContainerFormatError(f"header is not valid JSON: {exc}", path=self.path)
        if not isinstance(header, dict):
            raise ContainerFormatError("header JSON must be an object", path=self.path)

        metadata = header.pop(_METADATA_KEY, {})
        try:
            metadata = _validate_metadata(metadata)
        except ValueError as exc:
            raise ContainerFormatError(str(exc), path=self.path)

        data_size = file_size - 8 - header_len
        infos: dict[str, TensorInfo] = {}
        for name, entry in header.items():
            if not name:
                raise ContainerFormatError("empty tensor name in header", path=self.path)
            if not isinstance(entry, dict):
                raise ContainerFormatError(
                    "header entry must be an object", path=self.path, tensor=name
                )
            dtype = Dtype.from_wire(entry.get("dtype"), path=self.path, tensor=name)
            shape = _parse_shape(entry.get("shape"), path=self.path, tensor=name)
            offsets = entry.get("data_offsets")
            if (
                not isinstance(offsets, list)
                or len(offsets) != 2
                or any(not isinstance(o, int) or isinstance(o, bool) for o in offsets)
            ):
                raise ContainerFormatError(
                    f"data_offsets must be [begin, end], got {offsets!r}",
                    path=self.path,
                    tensor=name,
                )
            begin, end = offsets
            if not (0 <= begin <= end <= data_size):
                raise ContainerFormatError(
                    f"data_offsets [{begin}, {end}] outside data section of "
                    f"{data_size} bytes (truncated file?)",
                    path=self.path,
                    tensor=name,
                )
            info = TensorInfo(name, dtype, shape, (begin, end))
            if end - begin != info.nbytes:
                raise ContainerFormatError(
                    f"data_offsets span {end - begin} bytes but dtype/shape "
                    f"require {info.nbytes}",
                    path=self.path,
                    tensor=name,
                )
            infos[name] = info
        return {k: infos[k] for k in sorted(infos)}, metadata

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._infos)

    @property
    def metadata(self) -> dict[str, str]:
        return dict(self._metadata)

    def info(self, name: str) -> TensorInfo:
        return self._infos[name]

    def read(self, name: str) -> np.ndarray:
        """Read one tensor as a freshly allocated FP32 array."""
        info = self._infos[name]
        self._file.seek(self._data_start + info.data_offsets[0])
        count = info.num_elements
        out = np.empty(count, dtype=np.float32)
        if info.dtype is Dtype.FP32:
            got = self._file.readinto(memoryview(out).cast("B")) if count else 0
            if got != count * 4:
                raise ContainerFormatError(
                    "unexpected EOF while reading tensor data",
                    path=self.path,
                    tensor=name,
                )
            if sys.byteorder != "little":  # pragma: no cover
                out.byteswap(inplace=True)
        else:
            pos = 0
            buf = bytearray(min(_CHUNK_ELEMS, max(count, 1)) * 2)
            while pos < count:
                m = min(_CHUNK_ELEMS, count - pos)
                view = memoryview(buf)[: m * 2]
                if self._file.readinto(view) != m * 2:
                    raise ContainerFormatError(
                        "unexpected EOF while reading tensor data",
                        path=self.path,
                        tensor=name,
                    )
                out[pos : pos + m] = np.frombuffer(view, dtype="<f2")
                pos += m
        return out.reshape(info.shape)

    def close(self) -> None:
        self._file.close()

    def __enter__(self) -> "CheckpointReader":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _canonical_header_bytes(
    entries: Sequence[TensorInfo], metadata: Mapping[str, str]
) -> bytes:
    header: dict = {}
    if metadata:
        header[_METADATA_KEY] = {k: metadata[k] for k in sorted(metadata)}
    for info in entries:
        header[info.name] = {
            "dtype": info.dtype.value,
            "shape": list(info.shape),
            "data_offsets": list(info.data_offsets),
        }
    raw = json.dumps(header, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    raw += b" " * (-len(raw) % 8)  # data section starts 8-aligned
    return raw


class CheckpointWriter:
    """Streaming canonical writer.

    The full layout plan (name, stored dtype, shape per tensor) is fixed up
    front so the header can be emitted first; tensors must then be supplied
    in canonical name order.  FP32 values are converted to their stored
    dtype chunk-wise; a finite value with magnitude above ``FP16_MAX``
    aborts the write rather than saturating.
    """

    def __init__(self, path, plan: Sequence[tuple[str, Dtype, tuple[int, ...]]],
                 metadata=None):
        self.path = Path(path)
        seen = set()
        for name, _, _ in plan:
            _validate_name(name)
            if name in seen:
                raise ValueError(f"duplicate tensor name {name!r} in plan")
            seen.add(name)
        infos = []
        offset = 0
        for name, dtype, shape in sorted(plan, key=lambda p: p[0]):
            info = TensorInfo(name, Dtype(dtype), tuple(shape), (0, 0))
            nbytes = info.nbytes
            infos.append(
                TensorInfo(name, info.dtype, info.shape, (offset, offset + nbytes))
            )
            offset += nbytes
        self._infos = infos
        self._pending = [info.name for info in infos]
        self._metadata = _validate_metadata(metadata)
        self._file = open(self.path, "wb")
        self._closed = False
        try:
            header = _canonical_header_bytes(infos, self._metadata)
            self._file.write(_HEADER_LEN.pack(len(header)))
            self._file.write(header)
        except Exception:
            self._discard()
            raise

    def _discard(self) -> None:
        self._closed = True
        self._file.close()
        self.path.unlink(missing_ok=True)

    def write(self, name: str, values: np.ndarray) -> None:
        if self._closed:
            raise ValueError("writer is closed")
        if not self._pending or self._pending[0] != name:
            expected = self._pending[0] if self._pending else "<none>"
            raise ValueError(
                f"tensors must be written in canonical order: expected "
                f"{expected!r}, got {name!r}"
            )
        info = next(i for i in self._infos if i.name == name)
        flat = np.ascontiguousarray(values, dtype=np.float32).reshape(-1)
        if flat.size != info.num_elements or tuple(np.shape(values)) != info.shape:
            raise ValueError(
                f"tensor {name!r} has shape {np.shape(values)}, plan says {info.shape}"
            )
        try:
            if info.dtype is Dtype.FP32:
                if sys.byteorder != "little":  # pragma: no cover
                    flat = flat.astype("<f4")
                self._file.write(flat.data)
            else:
                pos = 0
                while pos < flat.size:
                    chunk = flat[pos : pos + _CHUNK_ELEMS]
                    over = np.isfinite(chunk) & (np.abs(chunk) > FP16_MAX)
                    if over.any():
                        idx = int(np.argmax(over))
                        raise Fp16RangeError(
                            f"tensor {name!r} element {pos + idx} is "
                            f"{float(chunk[idx])!r}, outside FP16 range "
                            f"(max {FP16_MAX})"
                        )
                    self._file.write(chunk.astype("<f2").data)
                    pos += _CHUNK_ELEMS
        except Exception:
            self._discard()
            raise
        self._pending.pop(0)

    def close(self) -> None:
        if self._closed:
            return
        if self._pending:
            missing = ", ".join(self._pending)
            self._discard()
            raise ValueError(f"writer closed before tensors were written: {missing}")
        self._closed = True
        self._file.close()

    def __enter__(self) -> "CheckpointWriter":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is not None:
            if not self._closed:
                self._discard()
        else:
            self.close()


def load_checkpoint(path) -> TensorMap:
    """Load a container into an in-memory map (FP32 compute representation)."""
    with CheckpointReader(path) as reader:
        arrays = {}
        stored = {}
        for name in reader.names:
            arrays[name] = reader.read(name)
            stored[name] = reader.info(name).dtype
        return TensorMap._from_owned(arrays, reader.metadata, stored)


def _plan_dtype(entry_dtype: Dtype, policy: str) -> Dtype:
    if policy == "preserve":
        return entry_dtype
    if policy == "force_fp32":
        return Dtype.FP32
    if policy == "force_fp16":
        return Dtype.FP16
    raise ValueError(
        f"unknown dtype policy {policy!r} (expected preserve, force_fp32, force_fp16)"
    )


def save_checkpoint(tensor_map: TensorMap, path, dtype_policy: str = "preserve") -> None:
    """Serialize a map canonically; ``dtype_policy`` picks storage dtypes.

    ``preserve`` keeps each tensor's stored dtype; ``force_fp32`` /
    ``force_fp16`` convert (round-to-nearest-even).  A finite value beyond
    the FP16 range raises :class:`Fp16RangeError` instead of saturating.
    """
    plan = [
        (name, _plan_dtype(tensor_map.stored_dtype(name), dtype_policy),
         tuple(tensor_map[name].shape))
        for name in tensor_map.names
    ]
    with CheckpointWriter(path, plan, metadata=tensor_map.metadata) as writer:
        for name in tensor_map.names:
            writer.write(name, tensor_map[name])
