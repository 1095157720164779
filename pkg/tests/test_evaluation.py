import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dhmm.evaluation import (accuracy, confusion_counts, effective_state_count, hungarian_align,
                             one_to_one_accuracy, state_histogram)

from oracles import brute_force_alignment


class TestAlignment:

    def test_identical(self):
        gold = [np.array([0, 1, 2, 2]), np.array([1, 0])]
        al = hungarian_align(gold, gold, 3)
        np.testing.assert_array_equal(al.mapping, [0, 1, 2])
        assert al.cost == 0.0
        assert one_to_one_accuracy(gold, gold, 3) == 1.0

    def test_cyclic_shift(self):
        gold = np.array([0, 1, 2, 0, 1, 2, 2])
        pred = (gold + 1) % 3
        al = hungarian_align(pred, gold, 3)
        np.testing.assert_array_equal(al.mapping, [2, 0, 1])
        np.testing.assert_array_equal(al.apply(pred), gold)
        assert one_to_one_accuracy(pred, gold, 3) == 1.0

    def test_inverted_binary(self):
        gold = np.array([0, 0, 1, 1, 1])
        assert one_to_one_accuracy(1 - gold, gold, 2) == 1.0

    def test_tie_break_is_lexicographic(self):
        # only 0 -> 1 matters; the other states take the smallest free indices
        pred, gold = np.zeros(4, dtype=int), np.ones(4, dtype=int)
        al = hungarian_align(pred, gold, 3)
        np.testing.assert_array_equal(al.mapping, [1, 0, 2])
        assert al.matched == 4

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_permutation_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        k = 4
        gold = [rng.integers(0, k, size=int(rng.integers(1, 12))) for _ in range(6)]
        pred = [rng.integers(0, k, size=len(g)) for g in gold]
        perm, best = brute_force_alignment(pred, gold, k)
        al = hungarian_align(pred, gold, k)
        assert al.matched == best
        np.testing.assert_array_equal(al.mapping, perm)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), k=st.integers(2, 6))
    def test_brute_force_and_relabel_invariance(self, seed, k):
        rng = np.random.default_rng(seed)
        gold = [rng.integers(0, k, size=10)]
        pred = [rng.integers(0, k, size=10)]
        _, best = brute_force_alignment(pred, gold, k)
        assert one_to_one_accuracy(pred, gold, k) == best / 10
        relabel = rng.permutation(k)
        assert one_to_one_accuracy([relabel[pred[0]]], gold, k) == best / 10
        assert one_to_one_accuracy(gold, pred, k) == best / 10

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            hungarian_align([np.array([0, 1])], [np.array([0])], 2)
        with pytest.raises(ValueError):
            one_to_one_accuracy(np.array([0, 1]), np.array([0, 1, 1]), 2)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            confusion_counts(np.array([0, 3]), np.array([0, 1]), 3)


class TestPlainAccuracy:

    def test_no_relabelling(self):
        gold = np.array([0, 0, 1, 1])
        assert accuracy(1 - gold, gold, 2) == 0.0
        assert accuracy(gold, gold, 2) == 1.0


class TestHistogram:

    def test_empty(self):
        h = state_histogram([], 3)
        np.testing.assert_array_equal(h.counts, [0, 0, 0])
        assert h.total == 0

    def test_counts(self):
        np.testing.assert_array_equal(state_histogram(np.array([0, 0, 1]), 3).counts, [2, 1, 0])

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            state_histogram(np.array([0, 5]), 3)


class TestEffectiveStates:

    def test_all_zero(self):
        assert effective_state_count(np.zeros(5), 50) == 0

    def test_strict_threshold(self):
        assert effective_state_count(np.array([1800, 49, 51, 50, 0]), 50) == 2

    def test_monotone_in_threshold(self):
        counts = np.random.default_rng(0).integers(0, 200, size=10)
        values = [effective_state_count(counts, s) for s in range(0, 220, 10)]
        assert all(b <= a for a, b in zip(values, values[1:]))

    def test_negative_threshold(self):
        with pytest.raises(ValueError):
            effective_state_count(np.zeros(2), -1)
