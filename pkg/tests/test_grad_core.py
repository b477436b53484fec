"""Tests for the numpy autodiff engine."""

import numpy as np
import pytest

from creagen.autograd import (
    BackwardError,
    NondeterministicFunction,
    Tensor,
    backward,
    batch_norm,
    conv2d,
    conv_transpose2d,
    conv_transpose_output_size,
    grad_check,
    record,
)
from creagen.autograd import functional as F
from creagen.gradsuite import registry, run_check


def _rand(rng, *shape):
    return Tensor(rng.standard_normal(shape))


class TestElementwise:
    def test_matmul_shape(self):
        out = F.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4))))
        assert out.shape == (2, 4)

    def test_sum_of_ones(self):
        assert F.sum(Tensor(np.ones((2, 2)))).item() == 4.0

    def test_grad_of_sum_is_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        backward(F.sum(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(4,\)"):
            F.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))

    def test_leading_batch_broadcast(self):
        a = Tensor(np.ones((5, 3)), requires_grad=True)
        b = Tensor(np.arange(3.0), requires_grad=True)
        backward(F.sum(F.add(a, b)))
        np.testing.assert_array_equal(b.grad, np.full(3, 5.0))

    def test_trailing_broadcast_rejected(self):
        with pytest.raises(ValueError):
            F.add(Tensor(np.ones((3, 5))), Tensor(np.ones(3)))

    def test_log_of_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            F.log(Tensor(np.array([1.0, 0.0])))

    def test_matmul_contraction_mismatch(self):
        with pytest.raises(ValueError):
            F.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    def test_concat_and_reshape(self):
        a, b = Tensor(np.zeros((2, 3))), Tensor(np.ones((1, 3)))
        out = F.concat([a, b], axis=0)
        assert out.shape == (3, 3)
        assert F.reshape(out, (9,)).shape == (9,)


class TestActivations:
    def test_sigmoid_zero(self):
        assert F.sigmoid(Tensor(np.array(0.0))).item() == 0.5

    def test_softmax_equal_logits(self):
        out = F.softmax(Tensor(np.zeros((1, 7))), axis=1).data
        np.testing.assert_allclose(out, np.full((1, 7), 1 / 7), rtol=0, atol=1e-15)

    def test_softmax_sums_to_one(self):
        x = Tensor(np.random.default_rng(0).standard_normal((10, 7)) * 5)
        s = F.softmax(x, axis=1).data.sum(axis=1)
        assert np.max(np.abs(s - 1)) <= 1e-12

    def test_log_softmax_stable(self):
        out = F.log_softmax(Tensor(np.array([[1000.0, 0.0]])), axis=1).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [[0.0, -1000.0]], atol=1e-12)

    def test_bad_axis(self):
        with pytest.raises(ValueError):
            F.softmax(Tensor(np.zeros((2, 3))), axis=2)

    def test_leaky_relu_slope(self):
        out = F.leaky_relu(Tensor(np.array([-1.0, 2.0]))).data
        np.testing.assert_array_equal(out, [-0.2, 2.0])


class TestBackward:
    def test_square(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        backward(F.mul(x, x))
        assert x.grad == 6.0

    def test_sigmoid_at_zero(self):
        x = Tensor(np.zeros(4), requires_grad=True)
        backward(F.sum(F.sigmoid(x)))
        np.testing.assert_allclose(x.grad, 0.25)

    def test_non_scalar_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(BackwardError):
            backward(F.scale(x, 2.0))

    def test_repeat_without_reset_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        backward(F.sum(x))
        with pytest.raises(BackwardError):
            backward(F.sum(x))
        x.zero_grad()
        backward(F.sum(x))

    def test_same_graph_twice_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = F.sum(x)
        backward(loss)
        x.zero_grad()
        with pytest.raises(BackwardError):
            backward(loss)

    def test_record_topological(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = F.exp(x)
        loss = F.sum(F.mul(y, y))
        rec = record(loss)
        position = {id(out): i for i, (_, _, out) in enumerate(rec.entries)}
        for i, (_, inputs, _) in enumerate(rec.entries):
            for t in inputs:
                if id(t) in position:
                    assert position[id(t)] < i

    def test_all_reachable_grads_populated(self):
        rng = np.random.default_rng(1)
        a, b = _rand(rng, 3, 4), _rand(rng, 4, 2)
        a.requires_grad = b.requires_grad = True
        backward(F.sum(F.tanh(F.matmul(a, b))))
        assert a.grad.shape == a.shape and b.grad.shape == b.shape

    def test_replay_is_bit_identical(self):
        def run():
            rng = np.random.default_rng(5)
            x, w = _rand(rng, 2, 3, 6, 6), _rand(rng, 4, 3, 3, 3)
            x.requires_grad = w.requires_grad = True
            out = F.sum(F.relu(conv2d(x, w, padding=1)))
            backward(out)
            return out.data.copy(), x.grad.copy(), w.grad.copy()

        for u, v in zip(run(), run()):
            assert np.array_equal(u, v)


class TestConv:
    def test_counting_overlaps(self):
        out = conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 3, 3))), padding=1).data[0, 0]
        assert out[0, 0] == out[0, 3] == out[3, 0] == out[3, 3] == 4.0
        np.testing.assert_array_equal(out[1:3, 1:3], 9.0)

    def test_identity_kernel(self):
        x = np.random.default_rng(0).standard_normal((2, 1, 5, 5))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1
        np.testing.assert_array_equal(conv2d(Tensor(x), Tensor(k), padding=1).data, x)

    def test_direct_sum(self):
        rng = np.random.default_rng(2)
        x, w = rng.standard_normal((1, 2, 5, 5)), rng.standard_normal((3, 2, 3, 3))
        out = conv2d(Tensor(x), Tensor(w), stride=2).data
        assert out.shape == (1, 3, 2, 2)
        for o in range(3):
            for i in range(2):
                for j in range(2):
                    ref = np.sum(x[0, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3] * w[o])
                    assert abs(out[0, o, i, j] - ref) < 1e-12

    def test_reflect_padding(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 0, 0] = 1
        out = conv2d(Tensor(x), Tensor(k), padding="reflect(1)").data[0, 0]
        # top-left of the reflected image is x[1, 1]
        assert out[0, 0] == x[0, 0, 1, 1]

    def test_output_size_formula(self):
        out = conv2d(Tensor(np.zeros((1, 1, 9, 9))), Tensor(np.zeros((1, 1, 4, 4))), stride=2, padding=1)
        assert out.shape[2:] == ((9 + 2 - 4) // 2 + 1,) * 2

    def test_non_positive_output_rejected(self):
        with pytest.raises(ValueError):
            conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError):
            conv2d(Tensor(np.zeros((1, 2, 5, 5))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_transpose_size(self):
        out = conv_transpose2d(Tensor(np.zeros((1, 2, 8, 8))), Tensor(np.zeros((2, 3, 4, 4))), stride=2, padding=1)
        assert out.shape == (1, 3, 16, 16)

    def test_transpose_output_padding(self):
        out = conv_transpose2d(
            Tensor(np.zeros((1, 2, 8, 8))), Tensor(np.zeros((2, 3, 3, 3))), stride=2, padding=1, output_padding=1
        )
        assert out.shape == (1, 3, 16, 16)

    @pytest.mark.parametrize("k,s,p", [(4, 2, 1), (3, 1, 1), (5, 2, 2), (3, 2, 0)])
    def test_adjoint(self, k, s, p):
        rng = np.random.default_rng(k + s + p)
        x = rng.standard_normal((2, 3, 8, 8))
        w = rng.standard_normal((4, 3, k, k))
        y = rng.standard_normal(conv2d(Tensor(x), Tensor(w), stride=s, padding=p).shape)
        lhs = np.sum(conv2d(Tensor(x), Tensor(w), stride=s, padding=p).data * y)
        op = 8 - conv_transpose_output_size(y.shape[2], k, s, p)
        back = conv_transpose2d(Tensor(y), Tensor(w), stride=s, padding=p, output_padding=op).data
        rhs = np.sum(x * back)
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


class TestBatchNorm:
    def _bn(self, x, gamma, beta, training=True):
        c = x.shape[1]
        return batch_norm(Tensor(x), Tensor(gamma), Tensor(beta), np.zeros(c), np.ones(c), training)

    def test_standardized_input_unchanged(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((64, 3))
        x = (x - x.mean(0)) / x.std(0)
        out = self._bn(x, np.ones(3), np.zeros(3)).data
        np.testing.assert_allclose(out, x, atol=1e-4)

    def test_gamma_zero_constant(self):
        x = np.random.default_rng(1).standard_normal((4, 2, 3, 3))
        out = self._bn(x, np.zeros(2), np.array([0.5, -1.0])).data
        np.testing.assert_array_equal(out[:, 0], 0.5)
        np.testing.assert_array_equal(out[:, 1], -1.0)

    def test_batch_of_one_rejected(self):
        with pytest.raises(ValueError):
            self._bn(np.ones((1, 3)), np.ones(3), np.zeros(3))

    def test_running_stats_momentum(self):
        x = np.random.default_rng(2).standard_normal((8, 2)) + 3.0
        rm, rv = np.zeros(2), np.ones(2)
        batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, True)
        np.testing.assert_allclose(rm, 0.1 * x.mean(0))
        np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(0, ddof=1))

    def test_eval_uses_running_stats(self):
        x = np.random.default_rng(3).standard_normal((4, 2))
        rm, rv = np.array([1.0, -1.0]), np.array([4.0, 0.25])
        out = batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, False).data
        np.testing.assert_allclose(out, (x - rm) / np.sqrt(rv + 1e-5))

    def test_frozen_stats(self):
        x = np.random.default_rng(4).standard_normal((4, 2))
        rm, rv = np.zeros(2), np.ones(2)
        batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, True, update_stats=False)
        np.testing.assert_array_equal(rm, 0)
        np.testing.assert_array_equal(rv, 1)


class TestGradCheck:
    def test_linear_exact(self):
        w = np.random.default_rng(0).standard_normal(5)
        x = Tensor(np.random.default_rng(1).standard_normal(5))
        rep = grad_check(lambda t: F.sum(F.mul(t, Tensor(w))), [x])
        assert rep.max_rel_error <= 1e-10

    def test_mce_random_logits(self):
        from creagen.divergence import mce_creativity_loss

        x = Tensor(np.random.default_rng(2).standard_normal((3, 7)))
        assert grad_check(mce_creativity_loss, [x], eps=1e-5).max_rel_error <= 1e-4

    def test_corrupted_gradient_reports_one(self):
        from creagen.autograd import make_op

        def double_wrong(t):
            return make_op(np.asarray(np.sum(t.data**2)), [t], lambda g: (4.0 * g * t.data,), "bad_square")

        x = Tensor(np.random.default_rng(3).standard_normal(4))
        rep = grad_check(double_wrong, [x])
        assert abs(rep.max_rel_error - 1.0) < 1e-6
        assert not rep.passed

    def test_nondeterministic_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(NondeterministicFunction):
            grad_check(lambda t: F.sum(F.scale(t, float(rng.random()))), [Tensor(np.ones(3))])

    def test_float32_rejected(self):
        with pytest.raises(ValueError):
            grad_check(F.sum, [Tensor(np.ones(3, dtype=np.float32))])

    def test_report_lists_worst(self):
        x = Tensor(np.ones(3))
        rep = grad_check(lambda t: F.sum(F.exp(t)), [x])
        assert rep.worst(1)[0].index == 0
        assert "max" in str(rep).lower()


class TestRegisteredChecks:
    STRICT = [n for n in registry() if not n.startswith("net.")]

    @pytest.mark.parametrize("name", STRICT)
    def test_strict_checks_seed_0(self, name):
        rep = run_check(name, seed=0)
        assert rep.passed, f"{name}: {rep}"

    def test_registry_covers_groups(self):
        names = list(registry())
        for prefix in ("op.", "conv2d", "conv_transpose2d", "batch_norm", "layer.", "loss.", "net."):
            assert any(n.startswith(prefix) for n in names), prefix
