"""Geometry diagnostics over deltas: cosine similarity and sparsity.

Cosines are computed on the whole flattened delta (canonical tensor
order).  Dot products and norms accumulate in FP64 regardless of the FP32
storage, since the interesting contrasts live in the second decimal place
and large flat vectors cancel heavily.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import LangArithError
from .vector_core import DeltaVector, flatten_delta
from .ties import _require_pairwise_compat

__all__ = [
    "SimilarityMatrix",
    "SparsityReport",
    "cosine_similarity",
    "similarity_matrix",
    "sparsity_stats",
]


@dataclass(frozen=True)
class SimilarityMatrix:
    labels: tuple[str, ...]
    values: np.ndarray  # float64, symmetric, unit diagonal

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values, dtype=np.float64)
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "labels", tuple(self.labels))

    def to_dict(self) -> dict:
        return {"labels": list(self.labels), "values": self.values.tolist()}


@dataclass(frozen=True)
class SparsityReport:
    label: str
    total_elements: int
    fraction_below: dict[float, float]
    histogram: tuple[tuple[float, float, int], ...]

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "total_elements": self.total_elements,
            "fraction_below": {repr(t): f for t, f in self.fraction_below.items()},
            "histogram": [
                {"lower": lo, "upper": hi, "count": c} for lo, hi, c in self.histogram
            ],
        }


def _flat64(d: DeltaVector) -> np.ndarray:
    return flatten_delta(d).astype(np.float64)


def cosine_similarity(a: DeltaVector, b: DeltaVector) -> float:
    """dot(a, b) / (|a| |b|) over the flattened deltas, FP64 reductions."""
    _require_pairwise_compat([a, b], "cosine_similarity")
    dot = 0.0
    na = 0.0
    nb = 0.0
    for name in a.names:
        x = a[name].ravel().astype(np.float64)
        y = b[name].ravel().astype(np.float64)
        dot += float(np.dot(x, y))
        na += float(np.dot(x, x))
        nb += float(np.dot(y, y))
    if na == 0.0 or nb == 0.0:
        zero = a.label if na == 0.0 else b.label
        raise LangArithError(f"cosine undefined: delta {zero!r} has zero norm")
    return dot / math.sqrt(na * nb)


def similarity_matrix(deltas: Sequence[DeltaVector]) -> SimilarityMatrix:
    """All pairwise cosines; symmetric with the diagonal pinned to 1."""
    if len(deltas) < 2:
        raise ValueError("similarity_matrix needs at least two deltas")
    _require_pairwise_compat(list(deltas), "similarity_matrix")
    n = len(deltas)
    values = np.ones((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            c = cosine_similarity(deltas[i], deltas[j])
            values[i, j] = c
            values[j, i] = c
    return SimilarityMatrix(tuple(d.label for d in deltas), values)


def sparsity_stats(
    d: DeltaVector, thresholds: Sequence[float], bins: int
) -> SparsityReport:
    """Fractions of near-zero magnitudes plus an equal-width value histogram.

    ``fraction_below[t]`` counts elements with ``|x| < t`` (strict).  The
    histogram spans [min, max] of the raw values with ``bins`` equal-width
    bins; counts always sum to the element count.
    """
    thresholds = [float(t) for t in thresholds]
    if any(t < 0 for t in thresholds):
        raise ValueError("thresholds must be nonnegative")
    if any(b > a for a, b in zip(thresholds[1:], thresholds)):
        raise ValueError("thresholds must be ascending")
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    flat = flatten_delta(d)
    n = flat.size
    if n == 0:
        raise LangArithError(f"sparsity undefined for empty delta {d.label!r}")
    mags = np.abs(flat)
    fractions = {t: float(np.count_nonzero(mags < t)) / n for t in thresholds}
    counts, edges = np.histogram(flat, bins=bins)
    histogram = tuple(
        (float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)
    )
    return SparsityReport(
        label=d.label,
        total_elements=int(n),
        fraction_below=fractions,
        histogram=histogram,
    )
