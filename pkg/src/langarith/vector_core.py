"""Delta extraction and learning-via-addition merging.

A delta is the element-wise difference between a fine-tuned and a base
checkpoint, restricted to whatever tensors the checkpoints contain.  All
arithmetic runs in FP32; the accumulation order is fixed (canonical tensor
order, then term order as listed) so results are bit-reproducible.

Deltas carry the content fingerprint of the base they were computed
against.  Applying or combining deltas checks that fingerprint by default;
mixing deltas from different bases is almost always a bug.

Two execution paths produce bit-identical bytes:

* the in-memory ops (:func:`diff`, :func:`scale`, :func:`add`,
  :func:`apply`, :func:`la_merge`, :func:`multi_merge`), and
* the per-tensor streaming file ops (:func:`diff_checkpoint_files`,
  :func:`merge_checkpoint_files`) used by the CLI, which never hold more
  than two tensors' FP32 footprint at a time.

Computed deltas are tagged for FP32 storage regardless of their inputs'
stored dtypes: a difference of two FP16 values is generally not FP16
representable, and silently rounding it would break reconstruction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import CompatibilityError, FingerprintMismatchError
from .tensor_store import (
    CheckpointReader,
    CheckpointWriter,
    CompatReport,
    Dtype,
    FingerprintAccumulator,
    TensorMap,
    validate_compat,
)

__all__ = [
    "DeltaVector",
    "MergeRecipe",
    "diff",
    "scale",
    "add",
    "apply",
    "la_merge",
    "multi_merge",
    "flatten_delta",
    "save_delta",
    "load_delta",
    "diff_checkpoint_files",
    "merge_checkpoint_files",
    "LABEL_KEY",
    "FINGERPRINT_KEY",
]

LABEL_KEY = "la.label"
FINGERPRINT_KEY = "la.base_fingerprint"


@dataclass(frozen=True)
class DeltaVector:
    """A tensor map whose role is a difference against a fixed base."""

    tensors: TensorMap
    base_fingerprint: str
    label: str

    @property
    def names(self) -> tuple[str, ...]:
        return self.tensors.names

    @property
    def num_elements(self) -> int:
        return self.tensors.num_elements

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


@dataclass(frozen=True)
class MergeRecipe:
    """Ordered (label, weight) terms plus normalization and target language."""

    terms: tuple[tuple[str, float], ...]
    normalize: bool = False
    target_language: str = ""

    def __post_init__(self):
        if not self.terms:
            raise ValueError("recipe needs at least one term")
        object.__setattr__(
            self,
            "terms",
            tuple((str(label), float(weight)) for label, weight in self.terms),
        )
        for label, weight in self.terms:
            if not math.isfinite(weight):
                raise ValueError(f"weight for {label!r} must be finite, got {weight!r}")

    def resolved_weights(self) -> list[float]:
        """Weights after optional normalization to unit sum (exact fsum)."""
        weights = [w for _, w in self.terms]
        if not self.normalize:
            return weights
        total = math.fsum(weights)
        if total == 0.0:
            raise ValueError("cannot normalize: weights sum to zero")
        return [w / total for w in weights]

    def to_json(self) -> str:
        return json.dumps(
            {
                "terms": [{"label": l, "weight": w} for l, w in self.terms],
                "normalize": self.normalize,
                "target_language": self.target_language,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "MergeRecipe":
        raw = json.loads(text)
        return cls(
            terms=tuple((t["label"], t["weight"]) for t in raw["terms"]),
            normalize=bool(raw.get("normalize", False)),
            target_language=str(raw.get("target_language", "")),
        )


def _require_arith_compat(a: TensorMap, b: TensorMap, what: str) -> None:
    report = validate_compat(a, b)
    if not report.arithmetic_ok:
        raise CompatibilityError(f"{what}: {report.summary()}", report=report)


def _require_same_base(deltas: Sequence[DeltaVector], what: str) -> None:
    fingerprints = {d.base_fingerprint for d in deltas}
    if len(fingerprints) > 1:
        raise FingerprintMismatchError(
            f"{what}: deltas were computed against different bases "
            f"({', '.join(sorted(f or '<none>' for f in fingerprints))})"
        )


def _delta_map(arrays: dict[str, np.ndarray]) -> TensorMap:
    return TensorMap._from_owned(
        arrays, {}, {name: Dtype.FP32 for name in arrays}
    )


def diff(ft: TensorMap, pre: TensorMap, label: str) -> DeltaVector:
    """Element-wise ``ft - pre`` in FP32, fingerprinted against ``pre``."""
    _require_arith_compat(ft, pre, "diff")
    arrays = {name: np.subtract(ft[name], pre[name]) for name in ft.names}
    return DeltaVector(_delta_map(arrays), pre.fingerprint(), label)


def scale(d: DeltaVector, c: float) -> DeltaVector:
    """Multiply every element by ``c`` (FP32); label/fingerprint preserved."""
    if not math.isfinite(c):
        raise ValueError(f"scale factor must be finite, got {c!r}")
    factor = np.float32(c)
    arrays = {name: d[name] * factor for name in d.names}
    return DeltaVector(_delta_map(arrays), d.base_fingerprint, d.label)


def add(deltas: Sequence[DeltaVector]) -> DeltaVector:
    """Pairwise FP32 sum in listed order; labels joined with ``+``."""
    if not deltas:
        raise ValueError("add needs at least one delta")
    _require_same_base(deltas, "add")
    first = deltas[0]
    for other in deltas[1:]:
        _require_arith_compat(first.tensors, other.tensors, "add")
    arrays = {name: first[name] for name in first.names}
    for other in deltas[1:]:
        arrays = {name: arrays[name] + other[name] for name in arrays}
    if len(deltas) == 1:
        arrays = {name: arr.copy() for name, arr in arrays.items()}
    label = "+".join(d.label for d in deltas)
    return DeltaVector(_delta_map(arrays), first.base_fingerprint, label)


def apply(pre: TensorMap, d: DeltaVector, *, force: bool = False) -> TensorMap:
    """Element-wise ``pre + d`` in FP32.

    Refuses to apply a delta whose recorded base fingerprint differs from
    ``pre`` unless ``force`` is set.
    """
    _require_arith_compat(pre, d.tensors, "apply")
    if not force and pre.fingerprint() != d.base_fingerprint:
        raise FingerprintMismatchError(
            f"delta {d.label!r} was computed against a different base "
            f"(recorded {d.base_fingerprint or '<none>'}, "
            f"given {pre.fingerprint()}); pass force to apply anyway"
        )
    arrays = {name: pre[name] + d[name] for name in pre.names}
    return TensorMap._from_owned(
        arrays, pre.metadata, {name: pre.stored_dtype(name) for name in pre.names}
    )


def la_merge(
    pre: TensorMap,
    t1: DeltaVector,
    t2: DeltaVector,
    lam: float,
    *,
    force: bool = False,
) -> TensorMap:
    """Two-term interpolation ``pre + lam*t1 + (1-lam)*t2``.

    ``lam`` must lie in [0, 1]; use :func:`multi_merge` with raw weights
    for anything outside that range.
    """
    if not (math.isfinite(lam) and 0.0 <= lam <= 1.0):
        raise ValueError(f"lambda must be in [0, 1], got {lam!r}")
    total = add([scale(t1, lam), scale(t2, 1.0 - lam)])
    return apply(pre, total, force=force)


def multi_merge(
    pre: TensorMap,
    recipe: MergeRecipe,
    deltas: Mapping[str, DeltaVector],
    *,
    force: bool = False,
) -> TensorMap:
    """Weighted multi-term merge ``pre + sum(w_i * d_i)``.

    With two terms and ``normalize`` this reproduces :func:`la_merge`
    bit-exactly.  Weights are unrestricted (negative or above one allowed);
    normalization rescales them to unit sum before use.
    """
    weights = recipe.resolved_weights()
    terms = []
    for label, _ in recipe.terms:
        if label not in deltas:
            raise ValueError(f"recipe references unknown delta label {label!r}")
        terms.append(deltas[label])
    total = add([scale(d, w) for d, w in zip(terms, weights)])
    return apply(pre, total, force=force)


def flatten_delta(d: DeltaVector) -> np.ndarray:
    """1-D FP32 view of all elements in canonical tensor order."""
    parts = [d[name].ravel() for name in d.names]
    if not parts:
        return np.empty(0, dtype=np.float32)
    return np.concatenate(parts)


def _with_metadata(tensor_map: TensorMap, metadata: dict[str, str]) -> TensorMap:
    return TensorMap._from_owned(
        dict(tensor_map),
        metadata,
        {name: tensor_map.stored_dtype(name) for name in tensor_map.names},
    )


def save_delta(d: DeltaVector, path, dtype_policy: str = "preserve") -> None:
    """Serialize a delta; label and base fingerprint ride in the metadata."""
    metadata = d.tensors.metadata
    metadata[LABEL_KEY] = d.label
    metadata[FINGERPRINT_KEY] = d.base_fingerprint
    from .tensor_store import save_checkpoint

    save_checkpoint(_with_metadata(d.tensors, metadata), path, dtype_policy)


def load_delta(path, *, label: str | None = None,
               require_fingerprint: bool = True) -> DeltaVector:
    """Load a delta checkpoint written by :func:`save_delta` (or any container).

    Falls back to the file stem as label when neither ``label`` nor the
    stored metadata provides one.  A missing fingerprint is an error unless
    ``require_fingerprint`` is off (analysis-only paths don't need it).
    """
    from .tensor_store import load_checkpoint

    tensors = load_checkpoint(path)
    metadata = tensors.metadata
    fingerprint = metadata.get(FINGERPRINT_KEY, "")
    if not fingerprint and require_fingerprint:
        raise FingerprintMismatchError(
            f"{path}: no recorded base fingerprint; re-create the delta with "
            "diff, or load with require_fingerprint=False"
        )
    resolved = label if label is not None else metadata.get(LABEL_KEY) or Path(path).stem
    return DeltaVector(tensors, fingerprint, resolved)


def _reader_compat(
    a: CheckpointReader, b: CheckpointReader, what: str
) -> None:
    names_a, names_b = set(a.names), set(b.names)
    shape_mm = tuple(
        (n, a.info(n).shape, b.info(n).shape)
        for n in sorted(names_a & names_b)
        if a.info(n).shape != b.info(n).shape
    )
    report = CompatReport(
        missing_in_a=tuple(sorted(names_b - names_a)),
        missing_in_b=tuple(sorted(names_a - names_b)),
        shape_mismatches=shape_mm,
    )
    if not report.arithmetic_ok:
        raise CompatibilityError(
            f"{what}: {a.path} vs {b.path}: {report.summary()}", report=report
        )


def diff_checkpoint_files(
    finetuned_path, base_path, out_path, label: str,
    dtype_policy: str = "preserve",
) -> dict:
    """Streaming file-level :func:`diff`: one tensor in flight at a time.

    The base is streamed twice: once to fingerprint it (the fingerprint is
    part of the header, which must be written first) and once for the
    subtraction.
    """
    with CheckpointReader(finetuned_path) as ft, CheckpointReader(base_path) as base:
        _reader_compat(ft, base, "diff")
        acc = FingerprintAccumulator()
        for name in base.names:
            acc.add(name, base.read(name))
        fingerprint = acc.hexdigest()

        metadata = {LABEL_KEY: label, FINGERPRINT_KEY: fingerprint}
        plan = [(name, Dtype.FP32, ft.info(name).shape) for name in ft.names]
        with CheckpointWriter(out_path, plan, metadata=metadata) as writer:
            for name in ft.names:
                out = ft.read(name)
                np.subtract(out, base.read(name), out=out)
                writer.write(name, out)
    return {
        "output": str(out_path),
        "label": label,
        "base_fingerprint": fingerprint,
        "tensors": len(plan),
    }


def merge_checkpoint_files(
    base_path,
    deltas: Sequence[tuple],
    out_path,
    *,
    normalize: bool = False,
    target_language: str = "",
    dtype_policy: str = "preserve",
    force: bool = False,
) -> dict:
    """Streaming file-level :func:`multi_merge`.

    ``deltas`` is a sequence of ``(path, weight)``.  Peak additional memory
    is two tensors' FP32 footprint (accumulator plus the term being folded
    in) regardless of checkpoint size.  The base fingerprint is accumulated
    during the single pass and checked against every delta's recorded
    fingerprint at the end; on mismatch the output is removed.
    """
    if not deltas:
        raise ValueError("merge needs at least one delta")
    delta_readers: list[CheckpointReader] = []
    base = CheckpointReader(base_path)
    try:
        labels = []
        recorded = []
        for path, _ in deltas:
            reader = CheckpointReader(path)
            delta_readers.append(reader)
            meta = reader.metadata
            labels.append(meta.get(LABEL_KEY) or Path(path).stem)
            recorded.append(meta.get(FINGERPRINT_KEY, ""))
        for reader in delta_readers:
            _reader_compat(base, reader, "merge")
        if not force:
            for path, fp in zip((p for p, _ in deltas), recorded):
                if not fp:
                    raise FingerprintMismatchError(
                        f"{path}: no recorded base fingerprint; pass force to "
                        "merge anyway"
                    )

        recipe = MergeRecipe(
            terms=tuple(zip(labels, (w for _, w in deltas))),
            normalize=normalize,
            target_language=target_language,
        )
        weights = recipe.resolved_weights()

        from .tensor_store import _plan_dtype

        plan = [
            (name, _plan_dtype(base.info(name).dtype, dtype_policy),
             base.info(name).shape)
            for name in base.names
        ]
        acc_fp = FingerprintAccumulator()
        with CheckpointWriter(out_path, plan, metadata=base.metadata) as writer:
            for name in base.names:
                acc = delta_readers[0].read(name)
                np.multiply(acc, np.float32(weights[0]), out=acc)
                for reader, weight in zip(delta_readers[1:], weights[1:]):
                    term = reader.read(name)
                    np.multiply(term, np.float32(weight), out=term)
                    np.add(acc, term, out=acc)
                    del term
                base_tensor = base.read(name)
                acc_fp.add(name, base_tensor)
                np.add(acc, base_tensor, out=acc)
                del base_tensor
                writer.write(name, acc)
                del acc

        base_fingerprint = acc_fp.hexdigest()
        if not force:
            for path, fp in zip((p for p, _ in deltas), recorded):
                if fp != base_fingerprint:
                    Path(out_path).unlink(missing_ok=True)
                    raise FingerprintMismatchError(
                        f"{path}: delta was computed against a different base "
                        f"(recorded {fp}, given {base_fingerprint}); pass force "
                        "to merge anyway"
                    )
    finally:
        base.close()
        for reader in delta_readers:
            reader.close()
    return {
        "output": str(out_path),
        "tensors": len(base.names),
        "terms": [
            {"path": str(p), "label": l, "weight": w}
            for (p, _), l, w in zip(deltas, labels, weights)
        ],
        "normalize": normalize,
        "base_fingerprint": base_fingerprint,
        "dtype_policy": dtype_policy,
    }
