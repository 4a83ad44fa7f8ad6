"""Trim / elect-sign / disjoint-mean merging of deltas.

The three steps operate on the globally flattened delta (canonical tensor
order): keep the top fraction of elements by magnitude, elect a per-
coordinate sign from the trimmed deltas, then average only the values
matching the elected sign.  The merged delta is scaled by the merge weight
and applied to the base.

Determinism rules, since the reference description leaves them open:

* the kept count is ``max(1, round_half_away_from_zero(fraction * n))``;
* magnitude ties at the cut boundary keep the earlier flat index;
* election and disjoint means accumulate in FP64, over deltas in listed
  order, and the mean is rounded to FP32 once at the end.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import CompatibilityError, FingerprintMismatchError
from .tensor_store import TensorMap, validate_compat
from .vector_core import DeltaVector, apply, scale, _delta_map, _require_same_base

__all__ = [
    "TiesConfig",
    "SignVector",
    "trim",
    "elect_sign",
    "disjoint_merge",
    "ties_merge",
]

DEFAULT_LAMBDA_RANGE = (0.8, 1.8)


@dataclass(frozen=True)
class TiesConfig:
    """Keep fraction, merge weight and tie rule for a ties merge.

    The merge weight is validated against ``lambda_range`` (default
    [0.8, 1.8], the usual operating range for mean-based merging); pass a
    wider range to experiment outside it.
    """

    top_k_fraction: float
    lam: float = 1.0
    lambda_range: tuple[float, float] = DEFAULT_LAMBDA_RANGE
    sign_tie_rule: str = "zero"

    def __post_init__(self):
        if not (0.0 < self.top_k_fraction <= 1.0):
            raise ValueError(
                f"top_k_fraction must be in (0, 1], got {self.top_k_fraction!r}"
            )
        lo, hi = self.lambda_range
        if not (math.isfinite(self.lam) and lo <= self.lam <= hi):
            raise ValueError(
                f"lambda {self.lam!r} outside validated range [{lo}, {hi}]"
            )
        if self.sign_tie_rule != "zero":
            raise ValueError(f"unknown sign tie rule {self.sign_tie_rule!r}")

    def to_json(self) -> str:
        return json.dumps({"top_k_fraction": self.top_k_fraction, "lambda": self.lam})

    @classmethod
    def from_json(cls, text: str) -> "TiesConfig":
        raw = json.loads(text)
        kwargs = {}
        if "lambda_range" in raw:
            kwargs["lambda_range"] = tuple(raw["lambda_range"])
        return cls(
            top_k_fraction=float(raw["top_k_fraction"]),
            lam=float(raw.get("lambda", 1.0)),
            **kwargs,
        )


@dataclass(frozen=True)
class SignVector:
    """Per-tensor arrays of {-1, 0, +1} (int8), canonically ordered."""

    signs: Mapping[str, np.ndarray]

    def __post_init__(self):
        ordered = {}
        for name in sorted(dict(self.signs)):
            arr = np.array(self.signs[name], dtype=np.int8, order="C")
            arr.flags.writeable = False
            ordered[name] = arr
        object.__setattr__(self, "signs", ordered)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.signs)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.signs[name]


def _kept_count(keep_fraction: float, n: int) -> int:
    # round half away from zero, floor at one element
    return min(n, max(1, math.floor(keep_fraction * n + 0.5)))


def trim(d: DeltaVector, keep_fraction: float) -> DeltaVector:
    """Zero all but the globally largest-magnitude elements.

    Keeps ``max(1, round(keep_fraction * n))`` elements across the whole
    flattened delta; boundary ties keep the earlier flat index.
    """
    if not (0.0 < keep_fraction <= 1.0):
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction!r}")
    from .vector_core import flatten_delta

    flat = flatten_delta(d)
    n = flat.size
    if n == 0:
        return d
    k = _kept_count(keep_fraction, n)
    if k >= n:
        return d
    # Stable sort on descending magnitude: equal magnitudes stay in
    # ascending flat-index order, so the earlier index wins at the cut.
    order = np.argsort(-np.abs(flat), kind="stable")
    kept = np.zeros(n, dtype=np.float32)
    idx = order[:k]
    kept[idx] = flat[idx]

    arrays = {}
    offset = 0
    for name in d.names:
        size = d[name].size
        arrays[name] = kept[offset : offset + size].reshape(d[name].shape).copy()
        offset += size
    return DeltaVector(_delta_map(arrays), d.base_fingerprint, d.label)


def _require_pairwise_compat(deltas: Sequence[DeltaVector], what: str) -> None:
    if not deltas:
        raise ValueError(f"{what} needs at least one delta")
    first = deltas[0]
    for other in deltas[1:]:
        report = validate_compat(first.tensors, other.tensors)
        if not report.arithmetic_ok:
            raise CompatibilityError(f"{what}: {report.summary()}", report=report)


def elect_sign(deltas: Sequence[DeltaVector]) -> SignVector:
    """Per-coordinate sign of the FP64 sum across deltas; exact zero -> 0."""
    _require_pairwise_compat(deltas, "elect_sign")
    signs = {}
    for name in deltas[0].names:
        total = np.zeros(deltas[0][name].shape, dtype=np.float64)
        for d in deltas:
            total += d[name]
        signs[name] = np.sign(total).astype(np.int8)
    return SignVector(signs)


def disjoint_merge(deltas: Sequence[DeltaVector], signs: SignVector) -> DeltaVector:
    """Mean of the values whose sign matches the elected sign.

    Coordinates with elected sign 0, or with no matching values, come out
    as exactly 0.  Sums run in FP64 over deltas in listed order; the mean
    is rounded to FP32 once.
    """
    _require_pairwise_compat(deltas, "disjoint_merge")
    if signs.names != deltas[0].names:
        raise CompatibilityError(
            f"disjoint_merge: sign names {signs.names} do not match delta "
            f"names {deltas[0].names}"
        )
    arrays = {}
    for name in deltas[0].names:
        elected = signs[name]
        if elected.shape != deltas[0][name].shape:
            raise CompatibilityError(
                f"disjoint_merge: sign shape {elected.shape} does not match "
                f"delta shape {deltas[0][name].shape} for tensor {name!r}"
            )
        total = np.zeros(elected.shape, dtype=np.float64)
        count = np.zeros(elected.shape, dtype=np.int64)
        for d in deltas:
            values = d[name]
            match = (np.sign(values) == elected) & (elected != 0)
            total += np.where(match, values, 0.0)
            count += match
        mean = np.divide(
            total, np.maximum(count, 1), where=count > 0,
            out=np.zeros_like(total),
        )
        arrays[name] = mean.astype(np.float32)
    label = "+".join(d.label for d in deltas)
    return DeltaVector(_delta_map(arrays), deltas[0].base_fingerprint, label)


def ties_merge(
    pre: TensorMap,
    deltas: Sequence[DeltaVector],
    cfg: TiesConfig,
    *,
    force: bool = False,
) -> TensorMap:
    """Full trim -> elect -> disjoint-mean pipeline, scaled and applied.

    Sign election runs on the *trimmed* deltas (pruning happens first).
    """
    if not deltas:
        raise ValueError("ties_merge needs at least one delta")
    if not force:
        _require_same_base(deltas, "ties_merge")
    trimmed = [trim(d, cfg.top_k_fraction) for d in deltas]
    signs = elect_sign(trimmed)
    merged = disjoint_merge(trimmed, signs)
    return apply(pre, scale(merged, cfg.lam), force=force)
