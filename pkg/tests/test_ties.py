"""Trim / elect / disjoint-mean merging against a naive reference."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import langarith as la
from langarith import DeltaVector, TensorMap, TiesConfig

from helpers import make_delta, random_map


def naive_trim(values, keep_fraction):
    """Reference trim over a flat python list: explicit sort, stable ties."""
    n = len(values)
    if n == 0:
        return list(values)
    k = min(n, max(1, math.floor(keep_fraction * n + 0.5)))
    order = sorted(range(n), key=lambda i: (-abs(values[i]), i))
    keep = set(order[:k])
    return [values[i] if i in keep else 0.0 for i in range(n)]


def naive_elect(columns):
    """Reference sign election: exact fsum per coordinate."""
    signs = []
    for col in columns:
        s = math.fsum(col)
        signs.append((s > 0) - (s < 0))
    return signs


def naive_disjoint(columns, signs):
    """Reference disjoint mean; FP64 mean rounded to FP32 once."""
    out = []
    for col, elected in zip(columns, signs):
        if elected == 0:
            out.append(np.float32(0.0))
            continue
        matching = [v for v in col if ((v > 0) - (v < 0)) == elected]
        if not matching:
            out.append(np.float32(0.0))
        else:
            out.append(np.float32(math.fsum(matching) / len(matching)))
    return out


def naive_ties(pre_flat, delta_flats, keep_fraction, lam):
    """Full reference pipeline on flat python lists, FP32 at the same points."""
    trimmed = [naive_trim(d, keep_fraction) for d in delta_flats]
    n = len(pre_flat)
    columns = [[t[i] for t in trimmed] for i in range(n)]
    signs = naive_elect(columns)
    merged = naive_disjoint(columns, signs)
    lam32 = np.float32(lam)
    return [
        np.float32(np.float32(p) + np.float32(lam32 * m))
        for p, m in zip(pre_flat, merged)
    ]


def flat_delta(values, fingerprint="fp", label="d", shape=None):
    arr = np.array(values, dtype=np.float32)
    if shape is not None:
        arr = arr.reshape(shape)
    return DeltaVector(TensorMap({"w": arr}), fingerprint, label)


class TestTiesConfig:
    def test_bounds(self):
        TiesConfig(0.2, 1.0)
        TiesConfig(1.0, 1.8)
        with pytest.raises(ValueError):
            TiesConfig(0.0, 1.0)
        with pytest.raises(ValueError):
            TiesConfig(1.2, 1.0)

    def test_lambda_validated_against_range(self):
        with pytest.raises(ValueError, match="outside"):
            TiesConfig(0.2, 0.5)
        TiesConfig(0.2, 0.5, lambda_range=(0.0, 2.0))

    def test_json_wire_format(self):
        cfg = TiesConfig(0.2, 1.0)
        assert json.loads(cfg.to_json()) == {"top_k_fraction": 0.2, "lambda": 1.0}
        assert TiesConfig.from_json('{"top_k_fraction": 0.2, "lambda": 1.0}') == cfg

    def test_unknown_tie_rule(self):
        with pytest.raises(ValueError):
            TiesConfig(0.2, 1.0, sign_tie_rule="majority")


class TestTrim:
    def test_keeps_top_two_of_five(self):
        d = flat_delta([0.1, -0.5, 0.2, 0.05, -0.9])
        out = la.trim(d, 0.4)
        expected = np.array([0.0, -0.5, 0.0, 0.0, -0.9], np.float32)
        assert np.array_equal(out["w"], expected)

    def test_keep_everything_is_identity(self):
        rng = np.random.default_rng(20)
        d = make_delta(rng, random_map(rng), "x")
        out = la.trim(d, 1.0)
        for name in d.names:
            assert np.array_equal(out[name], d[name])

    def test_boundary_ties_keep_earlier_flat_index(self):
        d = flat_delta([1.0, -1.0, 1.0, -1.0])
        out = la.trim(d, 0.5)
        assert out["w"].tolist() == [1.0, -1.0, 0.0, 0.0]

    def test_floor_at_one_element(self):
        d = flat_delta([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
        out = la.trim(d, 0.01)
        assert np.count_nonzero(out["w"]) == 1
        assert out["w"][9] == np.float32(1.0)

    def test_global_across_tensors_not_per_tensor(self):
        d = DeltaVector(
            TensorMap({"a": [0.1, 0.2], "b": [5.0, 6.0]}), "fp", "x"
        )
        out = la.trim(d, 0.5)
        assert out["a"].tolist() == [0.0, 0.0]
        assert out["b"].tolist() == [5.0, 6.0]

    def test_out_of_range_fraction(self):
        d = flat_delta([1.0])
        for bad in (0.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                la.trim(d, bad)

    @given(
        st.lists(st.integers(-64, 64), min_size=1, max_size=24),
        st.floats(0.01, 1.0),
    )
    @settings(max_examples=120, deadline=None)
    def test_matches_naive_and_idempotent(self, ints, keep):
        values = [v / 16.0 for v in ints]
        d = flat_delta(values)
        out = la.trim(d, keep)
        assert out["w"].tolist() == pytest.approx(naive_trim(values, keep), abs=0)
        again = la.trim(out, keep)
        assert np.array_equal(again["w"], out["w"])
        # never increases any magnitude
        assert np.all(np.abs(out["w"]) <= np.abs(d["w"]))

    def test_exact_count_and_monotonicity(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            n = int(rng.integers(4, 40))
            values = rng.standard_normal(n).astype(np.float32)
            values[values == 0] = 1.0  # ensure all-nonzero input
            d = flat_delta(values)
            fracs = sorted(rng.uniform(0.05, 1.0, size=3))
            counts = []
            for frac in fracs:
                out = la.trim(d, float(frac))
                k = min(n, max(1, math.floor(frac * n + 0.5)))
                assert np.count_nonzero(out["w"]) == k
                counts.append(k)
            assert counts == sorted(counts)


class TestElectSign:
    def test_hand_example(self):
        ds = [
            flat_delta([1.0, -2.0]),
            flat_delta([3.0, -1.0]),
            flat_delta([-1.0, 4.0]),
        ]
        signs = la.elect_sign(ds)
        assert signs["w"].tolist() == [1, 1]

    def test_single_delta_elementwise_sign(self):
        d = flat_delta([2.0, -3.0, 0.0])
        assert la.elect_sign([d])["w"].tolist() == [1, -1, 0]

    def test_opposite_deltas_cancel_to_zero(self):
        d = flat_delta([1.0, -2.0, 0.5])
        neg = la.scale(d, -1.0)
        assert not la.elect_sign([d, neg])["w"].any()

    def test_incompatible_deltas_rejected(self):
        a = flat_delta([1.0, 2.0])
        b = flat_delta([1.0, 2.0, 3.0])
        with pytest.raises(la.CompatibilityError):
            la.elect_sign([a, b])


class TestDisjointMerge:
    def test_mean_of_matching_values(self):
        ds = [flat_delta([1.0]), flat_delta([3.0]), flat_delta([-1.0])]
        signs = la.SignVector({"w": np.array([1], np.int8)})
        assert la.disjoint_merge(ds, signs)["w"].tolist() == [2.0]

    def test_single_match(self):
        ds = [flat_delta([-2.0]), flat_delta([-1.0]), flat_delta([4.0])]
        signs = la.SignVector({"w": np.array([1], np.int8)})
        assert la.disjoint_merge(ds, signs)["w"].tolist() == [4.0]

    def test_zero_elected_sign_outputs_zero(self):
        ds = [flat_delta([5.0]), flat_delta([7.0])]
        signs = la.SignVector({"w": np.array([0], np.int8)})
        assert la.disjoint_merge(ds, signs)["w"].tolist() == [0.0]

    def test_shape_mismatch_rejected(self):
        ds = [flat_delta([1.0, 2.0])]
        signs = la.SignVector({"w": np.array([1], np.int8)})
        with pytest.raises(la.CompatibilityError):
            la.disjoint_merge(ds, signs)


class TestTiesMerge:
    def test_single_delta_full_keep_reduces_to_apply(self):
        rng = np.random.default_rng(22)
        pre = random_map(rng)
        d = make_delta(rng, pre, "x")
        out = la.ties_merge(pre, [d], TiesConfig(1.0, 1.0))
        expected = la.apply(pre, d)
        for name in out.names:
            assert np.array_equal(out[name], expected[name])

    def test_opposite_deltas_return_base(self):
        rng = np.random.default_rng(23)
        pre = random_map(rng)
        d = make_delta(rng, pre, "x")
        out = la.ties_merge(pre, [d, la.scale(d, -1.0)], TiesConfig(1.0, 1.0))
        for name in out.names:
            assert np.array_equal(out[name], pre[name])

    def test_lambda_scales_merged_delta(self):
        pre = TensorMap({"w": [1.0, 1.0]})
        d = DeltaVector(TensorMap({"w": [2.0, -4.0]}), pre.fingerprint(), "x")
        out = la.ties_merge(pre, [d], TiesConfig(1.0, 1.5))
        assert out["w"].tolist() == [4.0, -5.0]

    def test_mismatched_bases_rejected(self):
        pre = TensorMap({"w": [0.0]})
        a = DeltaVector(TensorMap({"w": [1.0]}), "one", "a")
        b = DeltaVector(TensorMap({"w": [1.0]}), "two", "b")
        with pytest.raises(la.FingerprintMismatchError):
            la.ties_merge(pre, [a, b], TiesConfig(1.0, 1.0))

    def _random_instance(self, rng):
        n = int(rng.integers(2, 17))
        # small dyadic ints: plenty of exact ties, zeros and cancellations
        pre_vals = (rng.integers(-8, 9, size=n) / 16.0).astype(np.float32)
        n_deltas = int(rng.integers(2, 5))
        delta_vals = [
            (rng.integers(-8, 9, size=n) / 16.0).astype(np.float32)
            for _ in range(n_deltas)
        ]
        if rng.random() < 0.2 and n_deltas >= 2:
            delta_vals[1] = -delta_vals[0]  # force exact cancellations
        keep = float(rng.uniform(0.05, 1.0))
        lam = float(rng.uniform(0.8, 1.8))
        return pre_vals, delta_vals, keep, lam

    def test_matches_naive_reference_on_random_instances(self):
        rng = np.random.default_rng(24)
        for case in range(300):
            pre_vals, delta_vals, keep, lam = self._random_instance(rng)
            pre = TensorMap({"w": pre_vals})
            deltas = [
                DeltaVector(TensorMap({"w": v}), pre.fingerprint(), f"d{i}")
                for i, v in enumerate(delta_vals)
            ]
            out = la.ties_merge(pre, deltas, TiesConfig(keep, lam))
            expected = naive_ties(
                [float(v) for v in pre_vals],
                [[float(x) for x in v] for v in delta_vals],
                keep, lam,
            )
            got = out["w"].tolist()
            assert got == pytest.approx(expected, abs=0), (
                f"case {case}: keep={keep} lam={lam}"
            )

    def test_sign_consistency_invariant(self):
        rng = np.random.default_rng(25)
        for _ in range(100):
            _, delta_vals, keep, _ = self._random_instance(rng)
            deltas = [
                DeltaVector(TensorMap({"w": v}), "fp", f"d{i}")
                for i, v in enumerate(delta_vals)
            ]
            trimmed = [la.trim(d, keep) for d in deltas]
            signs = la.elect_sign(trimmed)
            merged = la.disjoint_merge(trimmed, signs)
            values = merged["w"]
            elected = signs["w"]
            nonzero = values != 0
            assert np.all(np.sign(values[nonzero]) == elected[nonzero])
