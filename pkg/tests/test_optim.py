"""Unit tests for the in-place optimizers."""

import numpy as np
import pytest

from lambda_nas.optim import AdamState, NesterovSGD


class TestNesterovSGD:
    def test_single_step_matches_hand_algebra(self):
        # one step from zero buffers: d = g + wd*theta; buf = d;
        # theta' = theta - lr * (d + mu * d)
        theta = np.array([1.0, -2.0])
        g = np.array([0.5, 0.5])
        lr, mu, wd = 0.1, 0.9, 0.01
        expected_d = g + wd * theta
        expected = theta - lr * (expected_d + mu * expected_d)

        sgd = NesterovSGD(momentum=mu, weight_decay=wd)
        params = [theta.copy()]
        sgd.init(params)
        sgd.step(params, [g], lr)
        np.testing.assert_allclose(params[0], expected, rtol=1e-15)

    def test_two_steps_accumulate_momentum(self):
        theta = np.array([0.0])
        g = np.array([1.0])
        lr, mu = 0.1, 0.5
        sgd = NesterovSGD(momentum=mu, weight_decay=0.0)
        params = [theta]
        sgd.init(params)
        # hand-rolled reference
        ref, buf = 0.0, 0.0
        for _ in range(2):
            buf = mu * buf + 1.0
            ref -= lr * (1.0 + mu * buf)
        sgd.step(params, [g], lr)
        sgd.step(params, [g], lr)
        assert params[0][0] == pytest.approx(ref, rel=1e-15)

    def test_zero_lr_leaves_params(self):
        sgd = NesterovSGD(momentum=0.9, weight_decay=0.1)
        params = [np.array([3.0])]
        sgd.init(params)
        sgd.step(params, [np.array([5.0])], lr=0.0)
        assert params[0][0] == 3.0

    def test_quadratic_descends(self):
        # f(x) = x^2 / 2, gradient x: iterates must approach zero
        sgd = NesterovSGD(momentum=0.9, weight_decay=0.0)
        params = [np.array([5.0])]
        sgd.init(params)
        for _ in range(200):
            sgd.step(params, [params[0].copy()], lr=0.05)
        assert abs(params[0][0]) < 1e-3


class TestAdam:
    def test_first_step_matches_textbook_update(self):
        theta = np.array([1.0])
        g = np.array([0.3])
        lr, b1, b2, eps = 0.01, 0.5, 0.999, 1e-8
        adam = AdamState(lr=lr, beta1=b1, beta2=b2, weight_decay=0.0, eps=eps)
        adam.init(theta)
        m_hat = (1 - b1) * g / (1 - b1)  # = g after bias correction
        v_hat = (1 - b2) * g * g / (1 - b2)
        expected = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
        adam.step(theta, g)
        np.testing.assert_allclose(theta, expected, rtol=1e-15)

    def test_zero_gradient_moves_only_by_weight_decay(self):
        theta = np.array([2.0])
        adam = AdamState(lr=0.1, beta1=0.5, beta2=0.999, weight_decay=0.01)
        adam.init(theta)
        before = theta.copy()
        adam.step(theta, np.zeros(1))
        assert theta[0] != before[0]
        # effective gradient is wd * theta > 0, so theta decreases
        assert theta[0] < before[0]

    def test_no_weight_decay_zero_gradient_is_fixed_point(self):
        theta = np.array([2.0])
        adam = AdamState(lr=0.1, beta1=0.5, beta2=0.999, weight_decay=0.0)
        adam.init(theta)
        adam.step(theta, np.zeros(1))
        assert theta[0] == 2.0

    def test_step_counter_monotone(self):
        theta = np.zeros(3)
        adam = AdamState(lr=0.1, beta1=0.5, beta2=0.999, weight_decay=0.0)
        adam.init(theta)
        for t in range(1, 6):
            adam.step(theta, np.ones(3))
            assert adam.step_count == t

    def test_requires_init(self):
        adam = AdamState(lr=0.1, beta1=0.5, beta2=0.999, weight_decay=0.0)
        with pytest.raises(ValueError):
            adam.step(np.zeros(1), np.zeros(1))
