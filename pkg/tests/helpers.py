"""Shared generators and assertions for the test suite.

Bit-exact claims about FP32 arithmetic only hold when the quantities
involved are exactly representable: ``fl(ft - pre)`` loses information
whenever the true difference needs more mantissa bits than FP32 has (for
example pre=0.5, ft=1e-9 reconstructs to 0.0).  The generators here
therefore draw values from dyadic grids (integer multiples of a power of
two) or from a shared binade, which makes differences, sums and
normalized weights exactly representable -- while still exercising random
shapes, scalars, empty tensors and both storage dtypes.
"""

from __future__ import annotations

import numpy as np

from langarith import Dtype, DeltaVector, TensorMap

NAME_POOL = [
    "adapter.down.weight",
    "adapter.down.bias",
    "adapter.up.weight",
    "adapter.up.bias",
    "adapter.gate",
    "invertible.F.weight",
    "invertible.G.weight",
    "layer_norm.weight",
    "layer_norm.bias",
    "head.scale",
]


def random_shape(rng: np.random.Generator, max_side: int = 6) -> tuple[int, ...]:
    """Random shape: scalars, vectors, matrices, rank-3, occasional dim 0."""
    rank = int(rng.integers(0, 4))
    if rank == 0:
        return ()
    shape = tuple(int(rng.integers(1, max_side + 1)) for _ in range(rank))
    if rng.random() < 0.05:
        lst = list(shape)
        lst[int(rng.integers(0, rank))] = 0
        shape = tuple(lst)
    return shape


def dyadic_values(
    rng: np.random.Generator, shape, max_int: int = 1 << 12, scale_pow: int = -10
) -> np.ndarray:
    """Values k * 2**scale_pow with |k| <= max_int: exact in FP32 and FP16-safe
    differences (|k1 - k2| <= 2*max_int fits comfortably in a 24-bit mantissa)."""
    k = rng.integers(-max_int, max_int + 1, size=shape)
    return (k.astype(np.float32)) * np.float32(2.0 ** scale_pow)


def same_binade_values(rng: np.random.Generator, shape) -> np.ndarray:
    """Fully random mantissas within [1, 2): differences of any two such
    values are exact in FP32 (Sterbenz)."""
    return (1.0 + rng.random(size=shape, dtype=np.float32)).astype(np.float32)


def random_map(
    rng: np.random.Generator,
    n_tensors: int | None = None,
    with_metadata: bool = True,
    allow_fp16: bool = True,
) -> TensorMap:
    """Random standalone map with mixed shapes and storage dtypes."""
    if n_tensors is None:
        n_tensors = int(rng.integers(1, 6))
    names = list(rng.choice(NAME_POOL, size=n_tensors, replace=False))
    arrays = {}
    stored = {}
    for name in names:
        shape = random_shape(rng)
        if allow_fp16 and rng.random() < 0.4:
            # FP16-storable values: small dyadic grid
            arrays[name] = dyadic_values(rng, shape, max_int=1 << 10, scale_pow=-6)
            stored[name] = Dtype.FP16
        else:
            arrays[name] = dyadic_values(rng, shape)
            stored[name] = Dtype.FP32
    metadata = {}
    if with_metadata and rng.random() < 0.6:
        metadata = {"source": f"run-{int(rng.integers(0, 999))}", "note": "synthetic"}
    return TensorMap(arrays, metadata=metadata, stored_dtypes=stored)


def random_pair(
    rng: np.random.Generator, n_tensors: int | None = None
) -> tuple[TensorMap, TensorMap]:
    """(pre, ft) with identical structure and exactly-representable diffs.

    Mixes dyadic-grid pairs with same-binade pairs so mantissas get full
    random coverage where the exactness argument allows it.
    """
    if n_tensors is None:
        n_tensors = int(rng.integers(1, 6))
    names = list(rng.choice(NAME_POOL, size=n_tensors, replace=False))
    pre_arrays, ft_arrays = {}, {}
    stored = {}
    for name in names:
        shape = random_shape(rng)
        mode = rng.random()
        if mode < 0.4:
            pre_arrays[name] = dyadic_values(rng, shape)
            ft_arrays[name] = dyadic_values(rng, shape)
            stored[name] = Dtype.FP32
        elif mode < 0.7:
            sign = np.float32(1.0 if rng.random() < 0.5 else -1.0)
            pre_arrays[name] = same_binade_values(rng, shape) * sign
            ft_arrays[name] = same_binade_values(rng, shape) * sign
            stored[name] = Dtype.FP32
        else:
            pre_arrays[name] = dyadic_values(rng, shape, max_int=1 << 10, scale_pow=-6)
            ft_arrays[name] = dyadic_values(rng, shape, max_int=1 << 10, scale_pow=-6)
            stored[name] = Dtype.FP16
    pre = TensorMap(pre_arrays, stored_dtypes=stored)
    ft = TensorMap(ft_arrays, stored_dtypes=stored)
    return pre, ft


def make_delta(
    rng: np.random.Generator, pre: TensorMap, label: str,
    max_int: int = 1 << 12, scale_pow: int = -10,
) -> DeltaVector:
    """Synthetic delta matching ``pre``'s structure, fingerprinted against it."""
    arrays = {
        name: dyadic_values(rng, pre[name].shape, max_int=max_int,
                            scale_pow=scale_pow)
        for name in pre.names
    }
    return DeltaVector(TensorMap(arrays), pre.fingerprint(), label)


def finetune_delta(rng: np.random.Generator, pre: TensorMap,
                   label: str) -> DeltaVector:
    """Delta at realistic fine-tuning scale (magnitude <= 1/16 of the base
    binade).  Keeps all merge intermediates at one shared scale, so ulp
    tolerances are well defined; wildly larger deltas would cancel against
    the base and amplify intermediate roundings past any fixed ulp bound."""
    return make_delta(rng, pre, label, max_int=1 << 8, scale_pow=-12)


def dyadic_lambda(rng: np.random.Generator, denom_pow: int = 10) -> float:
    """lambda = k / 2**denom_pow in [0, 1]: both it and 1 - lambda are exact
    in FP32 and FP64, so complement-based identities hold bitwise."""
    k = int(rng.integers(0, (1 << denom_pow) + 1))
    return k / float(1 << denom_pow)


def assert_same_values(a: TensorMap, b: TensorMap, context: str = "") -> None:
    """Bitwise value equality (names, shapes, FP32 bits); ignores metadata
    and storage dtype tags."""
    assert a.names == b.names, f"{context}: name sets differ"
    for name in a.names:
        x, y = a[name], b[name]
        assert x.shape == y.shape, f"{context}: shape differs for {name}"
        assert np.array_equal(x.view(np.uint32), y.view(np.uint32)), (
            f"{context}: values differ for {name}: {x} vs {y}"
        )
