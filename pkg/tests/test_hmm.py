import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp

from dhmm.emissions import (BernoulliEmission, CategoricalEmission, GaussianEmission,
                            emission_log_prob)
from dhmm.hmm import (HmmParams, NumericalUnderflowError, ObservationSequence, forward_backward,
                      joint_log_likelihood, sample_sequence, sequence_log_likelihood, viterbi)

from oracles import (enumerate_posteriors, enumerate_viterbi, random_observations,
                     random_params)

FAMILIES = ("gaussian", "categorical", "bernoulli")


def categorical(pi, a, b):
    return HmmParams(np.asarray(pi, float), np.asarray(a, float), CategoricalEmission(np.asarray(b, float)))


class TestEmissionLogProb:

    def test_standard_normal_mode(self):
        b = GaussianEmission(np.array([0.0]), np.array([1.0]))
        assert emission_log_prob(b, 0.0, 0) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)
        assert emission_log_prob(b, 0.0, 0) == pytest.approx(-0.918939, abs=1e-6)

    def test_categorical_half(self):
        b = CategoricalEmission(np.array([[0.5, 0.5]]))
        assert emission_log_prob(b, 0, 0) == pytest.approx(math.log(0.5), abs=1e-12)

    def test_bernoulli_product(self):
        b = BernoulliEmission(np.array([[0.9, 0.1]]))
        assert emission_log_prob(b, np.array([1, 0]), 0) == pytest.approx(math.log(0.81), abs=1e-12)
        assert emission_log_prob(b, np.array([1, 0]), 0) == pytest.approx(-0.210721, abs=1e-6)

    def test_zero_probability_outcome_is_neg_inf(self):
        b = BernoulliEmission(np.array([[1.0, 0.0]]))
        assert emission_log_prob(b, np.array([0, 0]), 0) == -np.inf
        assert emission_log_prob(b, np.array([1, 0]), 0) == 0.0

    def test_dimension_mismatch(self):
        b = BernoulliEmission(np.array([[0.9, 0.1]]))
        with pytest.raises(ValueError):
            emission_log_prob(b, np.array([1, 0, 1]), 0)
        with pytest.raises(ValueError):
            emission_log_prob(CategoricalEmission(np.array([[0.5, 0.5]])), 2, 0)

    def test_gaussian_density_can_exceed_one(self):
        b = GaussianEmission(np.array([1.0]), np.array([0.025]))
        assert emission_log_prob(b, 1.0, 0) > 0.0


class TestParams:

    def test_rejects_non_stochastic_rows(self):
        with pytest.raises(ValueError):
            categorical([0.5, 0.5], [[0.5, 0.4], [0.5, 0.5]], [[1.0], [1.0]])

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(ValueError):
            categorical([1.0], [[0.5, 0.5], [0.5, 0.5]], [[1.0], [1.0]])

    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(ValueError):
            GaussianEmission(np.array([0.0]), np.array([0.0]))

    def test_dict_round_trip(self):
        p = random_params(np.random.default_rng(0), 3, "bernoulli")
        q = HmmParams.from_dict(p.to_dict())
        np.testing.assert_array_equal(q.a, p.a)
        np.testing.assert_array_equal(q.b.probs, p.b.probs)


class TestForwardBackward:

    def test_single_step(self):
        p = random_params(np.random.default_rng(1), 3, "categorical")
        post = forward_backward(p, ObservationSequence(np.array([2])))
        expect = p.pi * p.b.probs[:, 2]
        np.testing.assert_allclose(post.unary[0], expect / expect.sum(), rtol=1e-12)
        assert post.pairwise.shape == (0, 3, 3)
        assert post.log_likelihood == pytest.approx(math.log(expect.sum()), rel=1e-12)

    def test_symmetric_states_give_uniform_posteriors(self):
        p = categorical([0.5, 0.5], [[0.5, 0.5], [0.5, 0.5]], [[0.2, 0.8], [0.2, 0.8]])
        post = forward_backward(p, ObservationSequence(np.array([0, 1, 1, 0])))
        np.testing.assert_allclose(post.unary, 0.5, atol=1e-12)

    def test_deterministic_chain(self):
        b = np.array([[0.1, 0.2, 0.7], [0.3, 0.3, 0.4]])
        p = categorical([1.0, 0.0], np.eye(2), b)
        y = np.array([2, 0, 1, 2])
        assert sequence_log_likelihood(p, ObservationSequence(y)) == pytest.approx(
            np.log(b[0, y]).sum(), rel=1e-12)

    def test_frozen_two_state_value(self):
        # hand-computed: sum over 4 paths of pi * a * b products
        p = categorical([0.6, 0.4], [[0.7, 0.3], [0.2, 0.8]], [[0.9, 0.1], [0.2, 0.8]])
        y = np.array([0, 1])
        total = sum(p.pi[i] * p.b.probs[i, 0] * p.a[i, j] * p.b.probs[j, 1]
                    for i in range(2) for j in range(2))
        assert total == pytest.approx(0.0378 + 0.1296 + 0.0016 + 0.0512, abs=1e-15)
        assert sequence_log_likelihood(p, ObservationSequence(y)) == pytest.approx(
            math.log(0.2202), rel=1e-13)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_matches_enumeration(self, family):
        rng = np.random.default_rng(7)
        p = random_params(rng, 3, family)
        seq = random_observations(rng, p, 5)
        post = forward_backward(p, seq)
        unary, pairwise, loglik = enumerate_posteriors(p, seq)
        np.testing.assert_allclose(post.unary, unary, rtol=1e-10, atol=1e-300)
        np.testing.assert_allclose(post.pairwise, pairwise, rtol=1e-10, atol=1e-300)
        assert post.log_likelihood == pytest.approx(loglik, rel=1e-10)

    def test_all_zero_emission_raises_with_timestep(self):
        p = HmmParams(np.array([0.5, 0.5]), np.full((2, 2), 0.5),
                      BernoulliEmission(np.array([[1.0], [1.0]])))
        with pytest.raises(NumericalUnderflowError) as info:
            forward_backward(p, ObservationSequence(np.array([[1], [0], [1]], dtype=np.uint8)))
        assert info.value.t == 1

    def test_long_sequence_does_not_underflow(self):
        rng = np.random.default_rng(3)
        p = random_params(rng, 4, "bernoulli", n_features=128)
        seq = random_observations(rng, p, 250)
        post = forward_backward(p, seq)
        assert np.isfinite(post.log_likelihood)
        np.testing.assert_allclose(post.unary.sum(axis=1), 1.0, atol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), k=st.integers(2, 4), t_len=st.integers(1, 8),
           family=st.sampled_from(FAMILIES))
    def test_marginal_invariants(self, seed, k, t_len, family):
        rng = np.random.default_rng(seed)
        p = random_params(rng, k, family)
        post = forward_backward(p, random_observations(rng, p, t_len))
        np.testing.assert_allclose(post.unary.sum(axis=1), 1.0, atol=1e-9)
        if t_len > 1:
            np.testing.assert_allclose(post.pairwise.sum(axis=(1, 2)), 1.0, atol=1e-9)
            np.testing.assert_allclose(post.pairwise.sum(axis=2), post.unary[:-1], atol=1e-9)
            np.testing.assert_allclose(post.pairwise.sum(axis=1), post.unary[1:], atol=1e-9)


class TestJointLikelihood:

    def test_single_step(self):
        p = random_params(np.random.default_rng(2), 3, "gaussian")
        seq = ObservationSequence(np.array([0.3]), np.array([1]))
        expect = math.log(p.pi[1]) + emission_log_prob(p.b, 0.3, 1)
        assert joint_log_likelihood(p, seq) == pytest.approx(expect, rel=1e-12)

    def test_impossible_transition(self):
        p = categorical([0.5, 0.5], np.eye(2), [[0.5, 0.5], [0.5, 0.5]])
        seq = ObservationSequence(np.array([0, 1]), np.array([0, 1]))
        assert joint_log_likelihood(p, seq) == -np.inf

    @pytest.mark.parametrize("family", FAMILIES)
    def test_marginalizes_to_sequence_likelihood(self, family):
        rng = np.random.default_rng(11)
        p = random_params(rng, 3, family)
        seq = random_observations(rng, p, 4)
        logs = [joint_log_likelihood(p, seq, np.array(x))
                for x in itertools.product(range(3), repeat=4)]
        assert logsumexp(logs) == pytest.approx(sequence_log_likelihood(p, seq), rel=1e-10)

    def test_requires_labels(self):
        p = random_params(np.random.default_rng(0), 2, "gaussian")
        with pytest.raises(ValueError):
            joint_log_likelihood(p, ObservationSequence(np.array([0.0])))


class TestViterbi:

    def test_identity_chain_stays_put(self):
        p = categorical([0.0, 0.0, 1.0], np.eye(3), np.full((3, 2), 0.5))
        path, _ = viterbi(p, ObservationSequence(np.array([0, 1, 1, 0, 1])))
        np.testing.assert_array_equal(path, [2, 2, 2, 2, 2])

    @pytest.mark.parametrize("family", FAMILIES)
    def test_matches_enumeration(self, family):
        rng = np.random.default_rng(5)
        p = random_params(rng, 3, family)
        seq = random_observations(rng, p, 6)
        path, score = viterbi(p, seq)
        best_path, best = enumerate_viterbi(p, seq)
        np.testing.assert_array_equal(path, best_path)
        assert score == pytest.approx(best, rel=1e-12)
        assert score == pytest.approx(joint_log_likelihood(p, seq, path), rel=1e-12)

    def test_tie_goes_to_lexicographically_smallest(self):
        # (0, 1) and (1, 0) are the only possible paths and score the same
        p = categorical([0.5, 0.5], [[0.0, 1.0], [1.0, 0.0]], np.full((2, 2), 0.5))
        path, _ = viterbi(p, ObservationSequence(np.array([0, 1])))
        np.testing.assert_array_equal(path, [0, 1])

    def test_all_equal_paths(self):
        p = categorical(np.full(3, 1 / 3), np.full((3, 3), 1 / 3), np.full((3, 2), 0.5))
        path, _ = viterbi(p, ObservationSequence(np.array([0, 1, 0, 1])))
        np.testing.assert_array_equal(path, [0, 0, 0, 0])


class TestSampling:

    def test_identity_chain(self):
        p = categorical([1.0, 0.0], np.eye(2), [[0.5, 0.5], [0.5, 0.5]])
        seq = sample_sequence(p, 20, np.random.default_rng(0))
        assert np.all(seq.labels == 0)

    def test_deterministic_given_seed(self):
        p = random_params(np.random.default_rng(0), 3, "bernoulli")
        s1 = sample_sequence(p, 10, np.random.default_rng(9))
        s2 = sample_sequence(p, 10, np.random.default_rng(9))
        np.testing.assert_array_equal(s1.obs, s2.obs)
        np.testing.assert_array_equal(s1.labels, s2.labels)

    def test_start_frequencies_match_pi(self):
        p = random_params(np.random.default_rng(4), 4, "gaussian")
        rng = np.random.default_rng(1)
        n = 10_000
        counts = np.bincount([sample_sequence(p, 1, rng).labels[0] for _ in range(n)], minlength=4)
        sd = np.sqrt(n * p.pi * (1 - p.pi))
        assert np.all(np.abs(counts - n * p.pi) <= 3 * sd)

    def test_rejects_empty_length(self):
        p = random_params(np.random.default_rng(0), 2, "gaussian")
        with pytest.raises(ValueError):
            sample_sequence(p, 0, np.random.default_rng(0))
