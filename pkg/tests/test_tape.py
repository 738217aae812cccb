"""Unit tests for the reverse-mode tape engine."""

import math

import numpy as np
import pytest

from lambda_nas.tape import (
    GradcheckError,
    NonFiniteError,
    Tape,
    TapeError,
    finite_diff_gradcheck,
)


class TestMatmul:
    def test_identity(self):
        t = Tape()
        out = t.matmul(t.leaf(np.eye(2)), t.leaf([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out.value, [[1.0, 2.0], [3.0, 4.0]])

    def test_zero(self):
        t = Tape()
        out = t.matmul(t.leaf([[1.0, 0.0]]), t.leaf([[0.0], [0.0]]))
        np.testing.assert_array_equal(out.value, [[0.0]])

    def test_hand_product(self):
        # [[1,2],[3,4]] @ [[1],[1]] worked out by hand and cross-checked with
        # an explicit loop implementation below.
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[1.0], [1.0]])
        ref = np.zeros((2, 1))
        for i in range(2):
            for j in range(1):
                for k in range(2):
                    ref[i, j] += a[i, k] * b[k, j]
        t = Tape()
        out = t.matmul(t.leaf(a), t.leaf(b))
        np.testing.assert_array_equal(out.value, [[3.0], [7.0]])
        np.testing.assert_array_equal(out.value, ref)

    def test_shape_mismatch(self):
        t = Tape()
        with pytest.raises(TapeError):
            t.matmul(t.leaf(np.ones((2, 3))), t.leaf(np.ones((2, 3))))


class TestScalarCombine:
    def test_identity_weight(self):
        t = Tape()
        x = t.leaf([1.0, -2.0, 3.0])
        out = t.scalar_combine([(t.leaf(1.0), x)])
        np.testing.assert_array_equal(out.value, x.value)

    def test_convexity_equal_inputs(self):
        t = Tape()
        x = t.leaf([0.5, 0.25])
        out = t.scalar_combine([(t.leaf(0.5), x), (t.leaf(0.5), x)])
        np.testing.assert_allclose(out.value, x.value, rtol=0, atol=0)

    def test_direct_evaluation(self):
        t = Tape()
        out = t.scalar_combine(
            [(t.leaf(0.3), t.leaf([1.0, 0.0])), (t.leaf(0.7), t.leaf([0.0, 1.0]))]
        )
        np.testing.assert_allclose(out.value, [0.3, 0.7])

    def test_weight_gradient_is_inner_product(self):
        # backward must deposit <t, upstream> into the weight slot
        t = Tape()
        w = t.leaf(0.5)
        x = t.leaf([2.0, -1.0])
        combined = t.scalar_combine([(w, x)])
        # reduce to a scalar through a second combine with scalar terms
        s0 = t.index(combined, 0)
        s1 = t.index(combined, 1)
        loss = t.scalar_combine([(t.leaf(1.0), s0), (t.leaf(3.0), s1)])
        grads = t.backward(loss)
        # d loss / dw = <x, upstream> with upstream = (1, 3)
        assert grads[w.idx] == pytest.approx(2.0 * 1.0 + (-1.0) * 3.0)
        np.testing.assert_allclose(grads[x.idx], [0.5, 1.5])

    def test_empty_rejected(self):
        with pytest.raises(TapeError):
            Tape().scalar_combine([])

    def test_shape_mismatch(self):
        t = Tape()
        with pytest.raises(TapeError):
            t.scalar_combine([(t.leaf(1.0), t.leaf([1.0])), (t.leaf(1.0), t.leaf([1.0, 2.0]))])


class TestTanh:
    def test_zero(self):
        t = Tape()
        assert t.tanh(t.leaf([0.0])).value[0] == 0.0

    def test_saturation(self):
        t = Tape()
        assert abs(t.tanh(t.leaf([50.0])).value[0] - 1.0) < 1e-12

    def test_gradient_at_zero_is_one(self):
        t = Tape()
        x = t.leaf(np.zeros(()))
        # promote the scalar through a combine so the root is scalar-shaped
        y = t.tanh(x)
        grads = t.backward(y)
        assert float(grads[x.idx]) == 1.0


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        t = Tape()
        loss = t.softmax_cross_entropy(t.leaf(np.zeros((3, 4))), [0, 1, 2])
        assert float(loss.value) == pytest.approx(math.log(4.0), rel=1e-12)

    def test_saturated_true_class(self):
        t = Tape()
        logits = np.zeros((1, 3))
        logits[0, 1] = 1000.0
        loss = t.softmax_cross_entropy(t.leaf(logits), [1])
        assert float(loss.value) == pytest.approx(0.0, abs=1e-12)

    def test_two_class_closed_form(self):
        t = Tape()
        loss = t.softmax_cross_entropy(t.leaf([[1.0, 0.0]]), [0])
        assert float(loss.value) == pytest.approx(math.log(1.0 + math.exp(-1.0)), rel=1e-12)

    def test_label_out_of_range(self):
        t = Tape()
        with pytest.raises(TapeError):
            t.softmax_cross_entropy(t.leaf(np.zeros((2, 3))), [0, 3])


class TestBackward:
    def test_constant_loss_gives_zero_grads(self):
        t = Tape()
        w = t.leaf([1.0, 2.0])
        c = t.leaf(np.asarray(4.0))
        grads = t.backward(c)
        np.testing.assert_array_equal(grads[w.idx], [0.0, 0.0])

    def test_half_square_norm(self):
        # loss = <w, w> / 2 built from scalar slots; gradient must equal w
        t = Tape()
        values = [0.7, -1.3, 2.1]
        ws = [t.leaf(v) for v in values]
        sq = t.scalar_combine([(w, w) for w in ws])
        loss = t.scale(sq, 0.5)
        grads = t.backward(loss)
        for w, v in zip(ws, values):
            assert float(grads[w.idx]) == pytest.approx(v)

    def test_non_scalar_root_rejected(self):
        t = Tape()
        with pytest.raises(TapeError):
            t.backward(t.leaf([1.0, 2.0]))

    def test_two_layer_net_matches_central_differences(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(-1, 1, size=(4, 3))
        y = rng.integers(0, 2, size=4)
        shapes = [(3, 5), (5,), (5, 2), (2,)]
        theta = [rng.uniform(-1, 1, size=s) for s in shapes]

        def f(params):
            t = Tape()
            w1, b1, w2, b2 = (t.leaf(p) for p in params)
            h = t.tanh(t.add_bias(t.matmul(t.leaf(x), w1), b1))
            logits = t.add_bias(t.matmul(h, w2), b2)
            loss = t.softmax_cross_entropy(logits, y)
            grads = t.backward(loss)
            return float(loss.value), [grads[n.idx] for n in (w1, b1, w2, b2)]

        assert finite_diff_gradcheck(f, theta, h=1e-5) < 1e-6

    def test_backward_is_deterministic(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 1, size=(3, 4))

        def run():
            t = Tape()
            w = t.leaf(rng_fixed)
            h = t.tanh(t.matmul(t.leaf(x), w))
            loss = t.softmax_cross_entropy(h, [0, 1, 0])
            return t.backward(loss)[w.idx]

        rng_fixed = np.random.default_rng(5).uniform(-1, 1, size=(4, 2))
        g1, g2 = run(), run()
        assert g1.tobytes() == g2.tobytes()


class TestFiniteness:
    def test_leaf_rejects_nan(self):
        with pytest.raises(NonFiniteError):
            Tape().leaf([np.nan])

    def test_overflowing_op_rejected(self):
        t = Tape()
        big = t.leaf(np.full((2, 2), 1e200))
        with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
            t.matmul(big, big)

    def test_reasonable_range_is_safe(self):
        rng = np.random.default_rng(11)
        t = Tape()
        a = t.leaf(rng.uniform(-1e3, 1e3, size=(4, 4)))
        b = t.leaf(rng.uniform(-1e3, 1e3, size=(4, 4)))
        out = t.tanh(t.scale(t.add(t.matmul(a, b), t.matmul(b, a)), 0.25))
        assert np.all(np.isfinite(out.value))


class TestGradcheck:
    def test_linear_function_is_exact(self):
        def f(params):
            (theta,) = params
            return float(2.0 * theta.sum() + 1.0), [np.full_like(theta, 2.0)]

        assert finite_diff_gradcheck(f, [np.array([0.5, -0.25])], h=1e-5) < 1e-10

    def test_cubic_taylor_error(self):
        # central difference of theta^3 at 1 with h=1e-3 is 3 + h^2
        def f(params):
            (theta,) = params
            v = float(theta[0] ** 3)
            return v, [np.array([3.0 * theta[0] ** 2])]

        err = finite_diff_gradcheck(f, [np.array([1.0])], h=1e-3)
        assert err == pytest.approx(1e-6 / 3.0, rel=1e-2)
        assert err < 1e-5

    def test_rejects_bad_step(self):
        with pytest.raises(GradcheckError):
            finite_diff_gradcheck(lambda p: (0.0, [np.zeros(1)]), [np.zeros(1)], h=0.0)

    def test_rejects_non_finite_value(self):
        def f(params):
            return float("nan"), [np.zeros(1)]

        with pytest.raises(GradcheckError):
            finite_diff_gradcheck(f, [np.zeros(1)])


class TestRandomizedGradients:
    """AD gradients agree with central differences on random small graphs."""

    @pytest.mark.parametrize("seed", range(6))
    def test_mixed_graph(self, seed):
        rng = np.random.default_rng(100 + seed)
        m, k, c = rng.integers(2, 5, size=3)
        x = rng.uniform(-2, 2, size=(m, k))
        y = rng.integers(0, c, size=m)
        shapes = [(k, c), (c,), ()]
        theta = [rng.uniform(-2, 2, size=s) for s in shapes]

        def f(params):
            t = Tape()
            w, b, gate = (t.leaf(p) for p in params)
            base = t.add_bias(t.matmul(t.leaf(x), w), b)
            mixed = t.scalar_combine([(gate, t.tanh(base)), (t.leaf(0.5), base)])
            loss = t.softmax_cross_entropy(mixed, y)
            grads = t.backward(loss)
            return float(loss.value), [grads[n.idx] for n in (w, b, gate)]

        assert finite_diff_gradcheck(f, theta, h=1e-5) < 1e-5
