"""Checkpoint-level language arithmetic.

Extract parameter deltas from adapter checkpoints, merge them by weighted
addition or trim/elect/disjoint-mean merging, pick the interpolation
weight by grid sweep against a pluggable evaluator, and analyze delta
geometry (cosine similarity, sparsity).
"""

from .errors import (
    CompatibilityError,
    ContainerFormatError,
    FingerprintMismatchError,
    Fp16RangeError,
    LangArithError,
    SweepError,
    UnknownLanguageError,
)
from .tensor_store import (
    CheckpointReader,
    CheckpointWriter,
    CompatReport,
    Dtype,
    FP16_MAX,
    TensorInfo,
    TensorMap,
    load_checkpoint,
    save_checkpoint,
    validate_compat,
)
from .vector_core import (
    DeltaVector,
    MergeRecipe,
    add,
    apply,
    diff,
    diff_checkpoint_files,
    flatten_delta,
    la_merge,
    load_delta,
    merge_checkpoint_files,
    multi_merge,
    save_delta,
    scale,
)
from .ties import SignVector, TiesConfig, disjoint_merge, elect_sign, ties_merge, trim
from .analysis import (
    SimilarityMatrix,
    SparsityReport,
    cosine_similarity,
    similarity_matrix,
    sparsity_stats,
)
from .sweep import (
    RELATED_LANGUAGES,
    SweepConfig,
    SweepEntry,
    SweepReport,
    lambda_grid,
    related_language,
    run_sweep,
    select_best,
)

__version__ = "0.1.0"

__all__ = [
    "LangArithError",
    "ContainerFormatError",
    "Fp16RangeError",
    "CompatibilityError",
    "FingerprintMismatchError",
    "UnknownLanguageError",
    "SweepError",
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
    "TiesConfig",
    "SignVector",
    "trim",
    "elect_sign",
    "disjoint_merge",
    "ties_merge",
    "SimilarityMatrix",
    "SparsityReport",
    "cosine_similarity",
    "similarity_matrix",
    "sparsity_stats",
    "RELATED_LANGUAGES",
    "related_language",
    "SweepConfig",
    "SweepEntry",
    "SweepReport",
    "lambda_grid",
    "run_sweep",
    "select_best",
]
