import math

import numpy as np
import pytest

from deepcrf.gradcheck import central_difference, relative_error
from deepcrf.core import onehot_rows
from deepcrf.nn import (EncoderWeights, TopLayer, backprop_frame, backprop_frames, frame_loss,
                        l1_subgrad, nn_forward)


def _random_net(seed, sizes=(5, 4, 3), K=3):
    rng = np.random.default_rng(seed)
    omega = EncoderWeights([rng.normal(size=(a + 1, b)) for a, b in zip(sizes, sizes[1:])])
    top = TopLayer(rng.normal(size=(sizes[-1], K)), rng.normal(size=K))
    return rng, omega, top


def _loop_forward(x, omega, top):
    """Unit-by-unit evaluation with math.exp."""
    a = list(x)
    for W in omega.layers:
        nxt = []
        for j in range(W.shape[1]):
            z = sum(a[i] * W[i, j] for i in range(len(a))) + W[len(a), j]
            nxt.append(1.0 / (1.0 + math.exp(-z)))
        a = nxt
    return [sum(a[i] * top.W[i, k] for i in range(len(a))) + top.c[k] for k in range(top.K)]


class TestForward:
    def test_zero_weights(self):
        omega = EncoderWeights([np.zeros((4, 5)), np.zeros((6, 2))])
        top = TopLayer(np.zeros((2, 3)), np.zeros(3))
        tr = nn_forward(np.array([1.0, -2.0, 3.0]), omega, top)
        for a in tr.activations:
            np.testing.assert_array_equal(a, 0.5)
        np.testing.assert_array_equal(tr.prediction, 0.0)

    def test_saturated_bias(self):
        W = np.zeros((4, 2))
        W[-1] = -50.0
        top = TopLayer(np.ones((2, 3)), np.array([0.3, -1.0, 2.0]))
        tr = nn_forward(np.ones(3), EncoderWeights([W]), top)
        assert np.all(tr.h < 1e-20)
        np.testing.assert_allclose(tr.prediction, top.c, atol=1e-15)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_loop_oracle(self, seed):
        rng, omega, top = _random_net(seed)
        x = rng.normal(size=5)
        np.testing.assert_allclose(nn_forward(x, omega, top).prediction,
                                   _loop_forward(x, omega, top), rtol=0, atol=1e-12)

    def test_batch_equals_rows(self):
        rng, omega, top = _random_net(4)
        X = rng.normal(size=(6, 5))
        batch = nn_forward(X, omega, top).prediction
        for t in range(6):
            np.testing.assert_allclose(batch[t], nn_forward(X[t], omega, top).prediction, rtol=0, atol=1e-14)

    def test_activations_in_open_interval(self):
        rng, omega, top = _random_net(5)
        tr = nn_forward(rng.normal(size=(50, 5)), omega, top)
        for a in tr.activations:
            assert np.all((a > 0) & (a < 1))

    def test_pure(self):
        rng, omega, top = _random_net(6)
        x = rng.normal(size=5)
        assert nn_forward(x, omega, top).prediction.tobytes() == nn_forward(x, omega, top).prediction.tobytes()

    def test_errors(self):
        _, omega, top = _random_net(0)
        with pytest.raises(ValueError):
            nn_forward(np.zeros(4), omega, top)
        with pytest.raises(ValueError):
            nn_forward(np.array([0, 0, np.nan, 0, 0]), omega, top)

    def test_layer_chain_validation(self):
        with pytest.raises(ValueError):
            EncoderWeights([np.zeros((4, 5)), np.zeros((5, 2))])


class TestFrameLoss:
    def test_values(self):
        assert frame_loss(np.array([0.0, 1.0, 0.0]), 1) == 0.0
        assert frame_loss(np.zeros(3), 2) == 1.0
        assert frame_loss(np.array([0.5, 0.5, 0.0]), 0) == 0.5

    def test_bad_label(self):
        with pytest.raises(ValueError):
            frame_loss(np.zeros(3), 3)


class TestBackprop:
    def test_zero_lambda_no_extra(self):
        rng, omega, top = _random_net(1)
        gw, gW, gc = backprop_frame(rng.normal(size=5), 1, None, 0.0, omega, top)
        assert all(not np.any(g) for g in gw) and not np.any(gW) and not np.any(gc)

    def test_exact_prediction_zero_top_gradient(self):
        omega = EncoderWeights([np.zeros((3, 2))])
        top = TopLayer(np.zeros((2, 3)), np.array([0.0, 1.0, 0.0]))
        _, gW, gc = backprop_frame(np.ones(2), 1, None, 0.1, omega, top)
        assert not np.any(gW) and not np.any(gc)

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        rng, omega, top = _random_net(seed)
        X = rng.normal(size=(4, 5))
        y = rng.integers(0, 3, size=4)
        extra = rng.normal(size=(4, 3))
        lam1 = 0.1

        def f():
            tr = nn_forward(X, omega, top)
            r = tr.prediction - onehot_rows(y, 3)
            return 0.5 * lam1 * (r * r).sum() + (extra * tr.h).sum()

        gw, gW, gc = backprop_frames(X, y, extra, lam1, omega, top)
        for W, g in zip(omega.layers, gw):
            assert relative_error(g, central_difference(f, W)).max() < 1e-4
        assert relative_error(gW, central_difference(f, top.W)).max() < 1e-4
        assert relative_error(gc, central_difference(f, top.c)).max() < 1e-4

    def test_dimension_mismatch(self):
        _, omega, top = _random_net(0)
        with pytest.raises(ValueError):
            backprop_frame(np.zeros(3), 0, None, 0.1, omega, top)


class TestL1:
    def test_zero_lambda(self):
        _, omega, _ = _random_net(0)
        assert all(not np.any(g) for g in l1_subgrad(omega, 0.0))

    def test_sign_and_kink(self):
        W = np.array([[-2.5, 0.0], [1.0, 0.0]])
        g = l1_subgrad(EncoderWeights([W]), 2e-4)[0]
        assert g[0, 0] == -2e-4 and g[0, 1] == 0.0 and g[1, 0] == 2e-4

    def test_negative_lambda(self):
        _, omega, _ = _random_net(0)
        with pytest.raises(ValueError):
            l1_subgrad(omega, -1.0)
