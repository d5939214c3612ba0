import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepcrf.core import onehot_rows
from deepcrf.crf import (CrfParams, apply_theta_step, emission_logits, forward_backward,
                         grad_theta_hard, grad_theta_soft, log_likelihood, sequence_score, viterbi)
from deepcrf.gradcheck import central_difference, relative_error

from conftest import brute_force_scores, random_theta


def _enumerated(emissions, theta):
    scores = brute_force_scores(emissions, theta)
    m = max(scores.values())
    log_Z = m + math.log(sum(math.exp(s - m) for s in scores.values()))
    T, K = emissions.shape
    gamma = np.zeros((T, K))
    xi = np.zeros((max(T - 1, 0), K, K))
    for y, s in scores.items():
        p = math.exp(s - log_Z)
        for t in range(T):
            gamma[t, y[t]] += p
        for t in range(T - 1):
            xi[t, y[t], y[t + 1]] += p
    return scores, log_Z, gamma, xi


class TestEmissions:
    def test_zero(self):
        theta = CrfParams.zeros(4, 3)
        np.testing.assert_array_equal(emission_logits(np.ones((2, 4)), theta, 0.1), 0.0)

    def test_lambda_zero_is_data_term(self, rng):
        theta = random_theta(rng, 4, 3)
        h = rng.random((5, 4))
        np.testing.assert_array_equal(emission_logits(h, theta, 0.0), h @ theta.W + theta.b)

    def test_direct_formula(self, rng):
        theta = random_theta(rng, 4, 3)
        h = rng.random((5, 4))
        lam1 = 0.1
        E = emission_logits(h, theta, lam1)
        for t in range(5):
            for k in range(3):
                hw = sum(h[t, j] * theta.W[j, k] for j in range(4))
                expected = (1 + lam1) * hw + theta.b[k] + lam1 * theta.c[k]
                assert abs(E[t, k] - expected) < 1e-12

    def test_errors(self, rng):
        theta = random_theta(rng, 4, 3)
        with pytest.raises(ValueError):
            emission_logits(np.ones((2, 3)), theta, 0.1)
        with pytest.raises(ValueError):
            emission_logits(np.full((2, 4), np.inf), theta, 0.1)


class TestScore:
    def test_zero(self):
        assert sequence_score(np.zeros((3, 2)), [0, 1, 1], CrfParams.zeros(2, 2)) == 0.0

    def test_single_frame(self, rng):
        theta = random_theta(rng, 2, 3)
        E = rng.normal(size=(1, 3))
        assert sequence_score(E, [2], theta) == theta.pi[2] + theta.tau[2] + E[0, 2]

    def test_brute_force_sum(self, rng):
        theta = random_theta(rng, 2, 3)
        E = rng.normal(size=(4, 3))
        for y, s in brute_force_scores(E, theta).items():
            assert abs(sequence_score(E, y, theta) - s) < 1e-12

    def test_bad_labels(self, rng):
        theta = random_theta(rng, 2, 3)
        with pytest.raises(ValueError):
            sequence_score(np.zeros((2, 3)), [0, 3], theta)
        with pytest.raises(ValueError):
            sequence_score(np.zeros((2, 3)), [0], theta)


class TestForwardBackward:
    def test_uniform(self):
        post = forward_backward(np.zeros((3, 4)), CrfParams.zeros(2, 4))
        assert abs(post.log_Z - 3 * math.log(4)) < 1e-12
        np.testing.assert_allclose(post.gamma, 0.25, atol=1e-15)

    def test_single_frame_softmax(self, rng):
        theta = random_theta(rng, 2, 3)
        E = rng.normal(size=(1, 3))
        post = forward_backward(E, theta)
        z = theta.pi + theta.tau + E[0]
        np.testing.assert_allclose(post.gamma[0], np.exp(z) / np.exp(z).sum(), atol=1e-14)
        assert post.xi.shape == (0, 3, 3)

    @pytest.mark.parametrize("seed", range(4))
    def test_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        theta = random_theta(rng, 2, 3)
        E = rng.normal(size=(5, 3))
        _, log_Z, gamma, xi = _enumerated(E, theta)
        post = forward_backward(E, theta)
        assert abs(post.log_Z - log_Z) < 1e-8
        np.testing.assert_allclose(post.gamma, gamma, atol=1e-8)
        np.testing.assert_allclose(post.xi, xi, atol=1e-8)

    def test_long_sequence_is_finite(self, rng):
        theta = random_theta(rng, 2, 5, scale=10.0)
        post = forward_backward(rng.normal(scale=50.0, size=(2000, 5)), theta)
        assert np.isfinite(post.log_Z) and np.all(np.isfinite(post.gamma))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 7), st.integers(2, 5), st.integers(0, 2**31))
    def test_normalization_and_consistency(self, T, K, seed):
        rng = np.random.default_rng(seed)
        theta = random_theta(rng, 2, K, scale=2.0)
        E = rng.normal(scale=3.0, size=(T, K))
        post = forward_backward(E, theta)
        np.testing.assert_allclose(post.gamma.sum(axis=1), 1.0, atol=1e-10)
        if T > 1:
            np.testing.assert_allclose(post.xi.sum(axis=(1, 2)), 1.0, atol=1e-10)
            np.testing.assert_allclose(post.xi.sum(axis=2), post.gamma[:-1], atol=1e-8)
            np.testing.assert_allclose(post.xi.sum(axis=1), post.gamma[1:], atol=1e-8)
        assert abs(post.log_Z - post.log_Z_backward(E, theta)) < 1e-10

    def test_probabilities_sum_to_one(self, rng):
        theta = random_theta(rng, 2, 3)
        E = rng.normal(size=(4, 3))
        log_Z = forward_backward(E, theta).log_Z
        probs = [math.exp(s - log_Z) for s in brute_force_scores(E, theta).values()]
        assert all(0 < p <= 1 for p in probs)
        assert abs(sum(probs) - 1.0) < 1e-8

    def test_row_shift_invariance(self, rng):
        theta = random_theta(rng, 2, 4)
        E = rng.normal(size=(6, 4))
        shift = rng.normal(scale=5.0, size=(6, 1))
        a, b = forward_backward(E, theta), forward_backward(E + shift, theta)
        np.testing.assert_allclose(a.gamma, b.gamma, atol=1e-12)
        np.testing.assert_allclose(a.xi, b.xi, atol=1e-12)
        np.testing.assert_array_equal(viterbi(E, theta)[0], viterbi(E + shift, theta)[0])


class TestViterbi:
    def test_all_zero_tie_break(self):
        y, s = viterbi(np.zeros((4, 3)), CrfParams.zeros(2, 3))
        np.testing.assert_array_equal(y, 0)
        assert s == 0.0

    def test_emission_dominated(self, rng):
        theta = random_theta(rng, 2, 4, scale=0.01)
        target = rng.integers(0, 4, size=7)
        E = 100.0 * onehot_rows(target, 4)
        np.testing.assert_array_equal(viterbi(E, theta)[0], target)

    @pytest.mark.parametrize("seed", range(4))
    def test_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        theta = random_theta(rng, 2, 4)
        E = rng.normal(size=(6, 4))
        scores = brute_force_scores(E, theta)
        best = max(sequence_score(E, y, theta) for y in scores)
        y, s = viterbi(E, theta)
        assert s == best
        assert s == sequence_score(E, y, theta)
        assert abs(s - max(scores.values())) < 1e-12


class TestGradients:
    def _instance(self, seed, T=4, K=3, H=5):
        rng = np.random.default_rng(seed)
        theta = random_theta(rng, H, K)
        h = rng.random((T, H))
        y = rng.integers(0, K, size=T)
        return rng, theta, h, y

    def test_soft_certain_model_zero(self):
        K, H = 3, 2
        theta = CrfParams.zeros(H, K)
        y = np.array([0, 2, 1])
        h = np.ones((3, H))
        E = emission_logits(h, theta, 0.0) + 200.0 * onehot_rows(y, K)
        post = forward_backward(E, theta)
        g = grad_theta_soft(h, y, post, 0.0, None, theta)
        for arr in g:
            np.testing.assert_allclose(arr, 0.0, atol=1e-12)

    def test_soft_lambda_zero(self):
        rng, theta, h, y = self._instance(3)
        post = forward_backward(emission_logits(h, theta, 0.0), theta)
        g = grad_theta_soft(h, y, post, 0.0, rng.normal(size=(4, 3)), theta)
        np.testing.assert_allclose(g.W, h.T @ (onehot_rows(y, 3) - post.gamma), atol=1e-14)
        np.testing.assert_array_equal(g.c, 0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_soft_finite_differences(self, seed):
        rng, theta, h, y = self._instance(seed)
        lam1 = 0.1
        hh = h.copy()

        def f():
            E = emission_logits(hh, theta, lam1)
            r = hh @ theta.W + theta.c - onehot_rows(y, 3)
            return log_likelihood(E, y, theta) - 0.5 * lam1 * (r * r).sum()

        post = forward_backward(emission_logits(h, theta, lam1), theta)
        resid = onehot_rows(y, 3) - (h @ theta.W + theta.c)
        g = grad_theta_soft(h, y, post, lam1, resid, theta)
        for name, arr in (("A", theta.A), ("pi", theta.pi), ("tau", theta.tau), ("b", theta.b),
                          ("W", theta.top.W), ("c", theta.top.c)):
            assert relative_error(getattr(g, name), central_difference(f, arr)).max() < 1e-4, name

        def f_ll():
            return log_likelihood(emission_logits(hh, theta, lam1), y, theta)
        assert relative_error(g.code, central_difference(f_ll, hh)).max() < 1e-4

    def test_hard_identical_is_zero(self):
        rng, theta, h, y = self._instance(0)
        assert grad_theta_hard(h, y, y, 0.1, theta).is_zero()

    def test_hard_single_frame(self):
        theta = CrfParams.zeros(2, 2)
        g = grad_theta_hard(np.ones((1, 2)), [0], [1], 0.0, theta)
        np.testing.assert_array_equal(g.pi, [1, -1])
        np.testing.assert_array_equal(g.tau, [1, -1])
        np.testing.assert_array_equal(g.b, [1, -1])
        np.testing.assert_array_equal(g.A, 0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_hard_is_score_gap_gradient(self, seed):
        rng, theta, h, y = self._instance(seed)
        y_star = rng.integers(0, 3, size=4)
        lam1 = 0.1

        def gap():
            E = emission_logits(h, theta, lam1)
            return sequence_score(E, y, theta) - sequence_score(E, y_star, theta)

        g = grad_theta_hard(h, y, y_star, lam1, theta)
        for name, arr in (("A", theta.A), ("pi", theta.pi), ("tau", theta.tau), ("b", theta.b),
                          ("W", theta.top.W), ("c", theta.top.c)):
            np.testing.assert_allclose(getattr(g, name), central_difference(gap, arr), atol=1e-7)

    @pytest.mark.parametrize("seed", range(5))
    def test_hard_update_increases_gap(self, seed):
        rng, theta, h, y = self._instance(seed)
        E = emission_logits(h, theta, 0.1)
        y_star, _ = viterbi(E, theta)
        if np.array_equal(y_star, y):
            y_star = (y + 1) % 3

        def gap(th):
            E = emission_logits(h, th, 0.1)
            return sequence_score(E, y, th) - sequence_score(E, y_star, th)

        before = gap(theta)
        apply_theta_step(theta, grad_theta_hard(h, y, y_star, 0.1, theta), 1e-3)
        assert gap(theta) > before

    def test_hard_length_mismatch(self):
        _, theta, h, y = self._instance(0)
        with pytest.raises(ValueError):
            grad_theta_hard(h, y, y[:-1], 0.1, theta)
