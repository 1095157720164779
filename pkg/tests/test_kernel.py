import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from dhmm.kernel import (SingularKernelError, bhattacharyya_distance, check_gradient,
                         kernel_matrix, log_det_gradient, log_det_kernel, mean_pairwise_diversity,
                         normalized_kernel, pairwise_diversity, printed_log_det_gradient,
                         product_kernel)
from dhmm.learning import project_to_simplex

from oracles import central_difference

P = np.array([0.5, 0.5])
Q = np.array([0.8, 0.2])
BC = math.sqrt(0.4) + math.sqrt(0.1)  # Bhattacharyya coefficient of P and Q


def interior_matrix(rng, k, conc=1.0):
    a = rng.dirichlet(np.full(k, conc), size=k)
    a = np.maximum(a, 1e-3)
    return a / a.sum(axis=1, keepdims=True)


class TestProductKernel:

    def test_self_kernel_is_one_on_simplex(self):
        assert product_kernel(Q, Q) == pytest.approx(1.0, abs=1e-15)

    def test_disjoint_supports(self):
        for rho in (0.25, 0.5, 2.0):
            assert product_kernel([1, 0], [0, 1], rho) == 0.0

    def test_hand_value(self):
        assert product_kernel(P, Q) == pytest.approx(BC, abs=1e-15)
        assert product_kernel(P, Q) == pytest.approx(0.948683, abs=1e-6)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            product_kernel([0.5, 0.5], [1.0, 0.0, 0.0])


class TestNormalizedKernel:

    def test_equal_inputs(self):
        assert normalized_kernel(Q, Q) == pytest.approx(1.0, abs=1e-15)

    def test_disjoint(self):
        assert normalized_kernel([1, 0], [0, 1]) == 0.0

    def test_hand_value(self):
        assert normalized_kernel(P, Q) == pytest.approx(BC, abs=1e-12)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            normalized_kernel([0, 0], [0.5, 0.5])

    def test_scale_invariant_off_simplex(self):
        assert normalized_kernel(3 * P, 0.2 * Q) == pytest.approx(BC, abs=1e-12)


class TestKernelMatrix:

    def test_identity(self):
        km = kernel_matrix(np.eye(4))
        np.testing.assert_array_equal(km.entries, np.eye(4))
        assert km.det() == pytest.approx(1.0)

    def test_identical_rows_are_singular(self):
        a = np.array([[0.3, 0.7, 0.0], [0.3, 0.7, 0.0], [0.1, 0.1, 0.8]])
        assert kernel_matrix(a).det() == 0.0
        assert log_det_kernel(a) == -np.inf

    def test_two_by_two(self):
        km = kernel_matrix(np.vstack([P, Q]))
        assert km.entries[0, 1] == pytest.approx(BC, abs=1e-12)
        # (sqrt .4 + sqrt .1)^2 = 0.9 exactly
        assert km.det() == pytest.approx(0.1, abs=1e-9)
        assert log_det_kernel(np.vstack([P, Q])) == pytest.approx(math.log(0.1), abs=1e-9)
        assert log_det_kernel(np.vstack([P, Q])) == pytest.approx(-2.302585, abs=1e-6)

    def test_identity_log_det_zero(self):
        assert log_det_kernel(np.eye(3)) == 0.0

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), k=st.integers(2, 7))
    def test_invariants(self, seed, k):
        rng = np.random.default_rng(seed)
        a = rng.dirichlet(np.full(k, 0.7), size=k)
        km = kernel_matrix(a).entries
        np.testing.assert_allclose(km, km.T, atol=1e-12)
        np.testing.assert_allclose(np.diag(km), 1.0, atol=1e-12)
        assert np.linalg.eigvalsh(km).min() >= -1e-10
        assert log_det_kernel(a) <= 1e-12
        perm = rng.permutation(k)
        ld, ld_perm = log_det_kernel(a), log_det_kernel(a[perm])
        if np.isfinite(ld):
            assert ld_perm == pytest.approx(ld, rel=1e-9, abs=1e-9)
        else:
            assert not np.isfinite(ld_perm) or ld_perm < -600


class TestGradient:

    @pytest.mark.parametrize("k", [3, 5, 8])
    def test_matches_finite_differences(self, k):
        rng = np.random.default_rng(k)
        for _ in range(5):
            a = interior_matrix(rng, k)
            assert check_gradient(a) <= 1e-5

    @pytest.mark.parametrize("rho", [0.3, 1.0, 1.7])
    def test_general_rho(self, rho):
        a = interior_matrix(np.random.default_rng(1), 4)
        assert check_gradient(a, rho) <= 1e-5

    def test_independent_difference_oracle(self):
        a = interior_matrix(np.random.default_rng(9), 4)
        fd = central_difference(log_det_kernel, a)
        np.testing.assert_allclose(log_det_gradient(a), fd, rtol=1e-5, atol=1e-6)

    def test_printed_form_differs_but_projects_the_same_way(self):
        # The printed closed form is half the exact gradient plus a per-row
        # constant, so it does not match finite differences, yet a row-wise
        # constant shift vanishes in the tangent space of the simplex.
        a = interior_matrix(np.random.default_rng(3), 5)
        exact = log_det_gradient(a)
        printed = printed_log_det_gradient(a)
        fd = central_difference(log_det_kernel, a)
        assert np.max(np.abs(printed - fd)) > 1e-2
        diff = printed - 0.5 * exact
        np.testing.assert_allclose(diff, diff[:, :1] * np.ones_like(diff), atol=1e-8)

    def test_constant_diagonal_form_also_fails_oracle(self):
        # sum_{m != i} [K^-1]_mi sqrt(A_mj / A_ij): drops the normalisation term
        a = interior_matrix(np.random.default_rng(4), 4)
        k_inv = linalg.inv(kernel_matrix(a).entries)
        off = k_inv - np.diag(np.diag(k_inv))
        direct = (off.T @ np.sqrt(a)) / np.sqrt(a)
        fd = central_difference(log_det_kernel, a)
        assert np.max(np.abs(direct - fd)) > 1e-2

    def test_zero_entry_rejected(self):
        a = np.array([[0.5, 0.5], [1.0, 0.0]])
        with pytest.raises(ValueError):
            log_det_gradient(a)

    def test_singular_rejected(self):
        with pytest.raises(SingularKernelError):
            log_det_gradient(np.full((3, 3), 1 / 3))

    def test_blows_up_near_identical_rows(self):
        base = np.array([[0.3, 0.3, 0.4], [0.2, 0.5, 0.3], [0.6, 0.2, 0.2]])
        norms = []
        for eps in (1e-1, 1e-2, 1e-3, 1e-4):
            a = base.copy()
            a[1] = project_to_simplex(base[0] + eps * np.array([1.0, -1.0, 0.0]))
            norms.append(np.linalg.norm(log_det_gradient(a)))
        assert all(n2 > n1 for n1, n2 in zip(norms, norms[1:]))

    def test_ascent_step_from_near_identical_rows(self):
        a = np.array([[0.3, 0.3, 0.4], [0.31, 0.29, 0.4], [0.6, 0.2, 0.2]])
        g = log_det_gradient(a)
        stepped = np.vstack([project_to_simplex(r) for r in a + 1e-4 * g])
        assert log_det_kernel(stepped) > log_det_kernel(a)


class TestBhattacharyya:

    def test_equal(self):
        assert bhattacharyya_distance(Q, Q) == 0.0

    def test_disjoint(self):
        assert bhattacharyya_distance([1, 0], [0, 1]) == np.inf

    def test_hand_value(self):
        assert bhattacharyya_distance(P, Q) == pytest.approx(-math.log(BC), abs=1e-12)
        assert bhattacharyya_distance(P, Q) == pytest.approx(0.05268026, abs=1e-8)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            bhattacharyya_distance([1.0], [0.5, 0.5])

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 8))
    def test_symmetric_and_non_negative(self, seed, n):
        rng = np.random.default_rng(seed)
        p, q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
        assert bhattacharyya_distance(p, q) == bhattacharyya_distance(q, p)
        assert bhattacharyya_distance(p, q) > 0.0


class TestMeanPairwiseDiversity:

    def test_identical_rows(self):
        assert mean_pairwise_diversity(np.tile(Q, (3, 1))) == (0.0, False)

    def test_single_pair(self):
        value, flag = mean_pairwise_diversity(np.vstack([P, Q]))
        assert value == pytest.approx(-math.log(BC), abs=1e-12)
        assert not flag

    def test_identity_is_infinite(self):
        assert mean_pairwise_diversity(np.eye(3)) == (np.inf, True)

    def test_matches_pairwise_matrix(self):
        a = np.random.default_rng(0).dirichlet(np.ones(4), size=4)
        d = pairwise_diversity(a)
        assert mean_pairwise_diversity(a)[0] == pytest.approx(d[np.triu_indices(4, 1)].mean())

    def test_needs_two_rows(self):
        with pytest.raises(ValueError):
            mean_pairwise_diversity(np.array([[1.0]]))
