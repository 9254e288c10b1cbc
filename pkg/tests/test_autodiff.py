import math

import mpmath
import numpy as np
import pytest

import fraudseq.autodiff as ad
from fraudseq.autodiff import AdamState, LSTMCellParams, Tensor, Trace
from fraudseq.errors import NumericError, ShapeError, VocabularyError


def tensor(data, grad=True, name=None):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad, name=name)


def lstm_params(rng, in_size, hidden):
    return LSTMCellParams(
        tensor(rng.uniform(-0.5, 0.5, (in_size, 4 * hidden))),
        tensor(rng.uniform(-0.5, 0.5, (hidden, 4 * hidden))),
        tensor(rng.uniform(-0.5, 0.5, 4 * hidden)),
    )


class TestDense:
    def test_identity(self):
        y = ad.dense(tensor([1.0, 2.0]), tensor(np.eye(2)), tensor([0.0, 0.0]))
        assert np.allclose(y.data, [1.0, 2.0])

    def test_zero_input_returns_bias(self):
        y = ad.dense(tensor([0.0, 0.0]), tensor(np.ones((2, 2))), tensor([3.0, 4.0]))
        assert np.allclose(y.data, [3.0, 4.0])

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=4)
        w = rng.normal(size=(4, 3))
        b = rng.normal(size=3)
        # independent naive oracle
        expect = np.zeros(3)
        for j in range(3):
            acc = b[j]
            for k in range(4):
                acc += x[k] * w[k, j]
            expect[j] = acc
        y = ad.dense(tensor(x), tensor(w), tensor(b))
        assert np.abs(y.data - expect).max() < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.dense(tensor([1.0, 2.0, 3.0]), tensor(np.eye(2)))


class TestEmbedding:
    def test_pad_row_zero_and_frozen(self):
        e = tensor([[0.0, 0.0], [1.0, 2.0], [3.0, 4.0]], name="emb")
        with Trace() as tr:
            v = ad.embedding_lookup(e, 0)
            loss = ad.sum_all(v)
        tr.backward(loss)
        assert np.all(v.data == 0.0)
        assert np.all(e.grad[0] == 0.0)

    def test_direct_indexing(self):
        e = tensor([[0, 0], [1, 2], [3, 4], [5, 6]])
        assert np.allclose(ad.embedding_lookup(e, 2).data, [3, 4])

    def test_out_of_range(self):
        e = tensor(np.zeros((3, 2)))
        with pytest.raises(VocabularyError):
            ad.embedding_lookup(e, 3)

    def test_repeated_lookup_accumulates(self):
        # finite-difference oracle on a repeated-id lookup
        rng = np.random.default_rng(1)
        e = tensor(rng.normal(size=(4, 3)), name="emb")
        w = tensor(rng.normal(size=3))

        def f():
            a = ad.embedding_lookup(e, np.array([2, 2]))
            s = ad.add(ad.slice_cols(a, 0, 3), ad.slice_cols(a, 0, 3))
            return ad.sum_all(ad.mul(ad.reshape(s, (2, 3)), ad.reshape(ad.concat([w, w]), (2, 3))))

        assert ad.grad_check(f, [e], eps=1e-4) < 1e-8


class TestLSTMCell:
    def test_all_zero(self):
        p = LSTMCellParams(
            tensor(np.zeros((3, 8))), tensor(np.zeros((2, 8))), tensor(np.zeros(8))
        )
        h, c = ad.lstm_cell(tensor(np.zeros(3)), tensor(np.zeros(2)), tensor(np.zeros(2)), p)
        assert np.all(h.data == 0.0) and np.all(c.data == 0.0)

    def test_gate_saturation_keeps_cell(self):
        # forget bias +50, input bias -50: c stays (numerically) at c_prev
        hidden = 2
        b = np.zeros(4 * hidden)
        b[:hidden] = -50.0
        b[hidden : 2 * hidden] = 50.0
        p = LSTMCellParams(
            tensor(np.zeros((3, 4 * hidden))), tensor(np.zeros((hidden, 4 * hidden))), tensor(b)
        )
        c_prev = np.array([0.3, -0.7])
        _, c = ad.lstm_cell(tensor(np.ones(3)), tensor(np.zeros(hidden)), tensor(c_prev), p)
        assert np.abs(c.data - c_prev).max() < 1e-15

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        p = lstm_params(rng, 3, 2)
        x = tensor(rng.normal(size=3))
        h0 = tensor(rng.normal(size=2))
        c0 = tensor(rng.normal(size=2))
        weights = tensor(rng.normal(size=2), grad=False)

        def f():
            h, c = ad.lstm_cell(x, h0, c0, p)
            return ad.sum_all(ad.add(ad.mul(h, weights), c))

        params = [x, h0, c0, p.w_x, p.w_h, p.b]
        assert ad.grad_check(f, params, eps=1e-4) < 1e-4


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss, probs = ad.softmax_cross_entropy(tensor(np.zeros(4)), true_id=2)
        assert np.allclose(probs, 0.25)
        assert abs(loss.item() - math.log(4)) < 1e-12

    def test_masked_position_zero_loss_zero_grad(self):
        logits = tensor(np.array([1.0, 2.0, 3.0]))
        with Trace() as tr:
            loss, _ = ad.softmax_cross_entropy(logits, true_id=1, mask=False)
        tr.backward(loss)
        assert loss.item() == 0.0
        assert logits.grad is None or np.all(logits.grad == 0.0)

    def test_matches_high_precision_oracle(self):
        logits = [2.0, 1.0, 0.0]
        with mpmath.workdps(50):
            exps = [mpmath.e**v for v in logits]
            z = sum(exps)
            expect_probs = [float(e / z) for e in exps]
            expect_loss = float(-mpmath.log(exps[0] / z))
        loss, probs = ad.softmax_cross_entropy(tensor(logits), true_id=1)
        assert np.abs(probs - expect_probs).max() < 1e-12
        assert abs(loss.item() - expect_loss) < 1e-12

    def test_out_of_range_id(self):
        with pytest.raises(VocabularyError):
            ad.softmax_cross_entropy(tensor(np.zeros(3)), true_id=4)

    def test_simplex_property(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            p = ad.softmax(rng.normal(scale=10, size=rng.integers(2, 20)))
            assert abs(p.sum() - 1.0) < 1e-9
            assert p.min() > 0.0 and p.max() < 1.0

    def test_masked_rows_get_no_gradient(self):
        rng = np.random.default_rng(4)
        logits = tensor(rng.normal(size=(3, 4)))
        ids = np.array([2, 0, 1])  # middle row masked
        with Trace() as tr:
            loss_rows, _ = ad.softmax_cross_entropy_rows(logits, ids)
            loss = ad.sum_all(loss_rows)
        tr.backward(loss)
        assert loss_rows.data[1] == 0.0
        assert np.all(logits.grad[1] == 0.0)
        assert np.any(logits.grad[0] != 0.0)


class TestAdam:
    def test_zero_grad_keeps_params(self):
        p = tensor([1.0, -2.0], name="w")
        p.grad = np.zeros(2)
        state = AdamState(base_lr=0.1)
        ad.adam_step([p], state)
        assert np.all(p.data == [1.0, -2.0])
        assert state.t == 1

    def test_first_step_analytic(self):
        p = tensor([0.0], name="w")
        p.grad = np.array([1.0])
        state = AdamState(base_lr=0.001)
        ad.adam_step([p], state)
        assert abs(p.data[0] - (-0.001 / (1.0 + 1e-8))) < 1e-15

    def test_quadratic_descends(self):
        theta = tensor([1.0], name="theta")
        state = AdamState(base_lr=0.1)
        values = [abs(theta.data[0])]
        for _ in range(10):
            theta.grad = 2.0 * theta.data
            ad.adam_step([theta], state)
            values.append(abs(theta.data[0]))
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_nonfinite_gradient_names_parameter(self):
        p = tensor([1.0], name="bad.w")
        p.grad = np.array([np.nan])
        with pytest.raises(NumericError, match="bad.w"):
            ad.adam_step([p], AdamState(base_lr=0.1))


class TestDecay:
    def test_epoch_zero(self):
        assert ad.decay_lr(AdamState(base_lr=0.01, decay=0.95), 0) == 0.01

    def test_one_epoch(self):
        assert ad.decay_lr(AdamState(base_lr=0.001, decay=0.95), 1) == pytest.approx(0.00095)

    def test_twenty_epochs(self):
        expect = 0.001 * 0.95**20  # scalar power oracle
        assert ad.decay_lr(AdamState(base_lr=0.001, decay=0.95), 20) == pytest.approx(
            expect, rel=1e-12
        )
        assert expect == pytest.approx(3.5849e-4, rel=1e-4)


class TestGradCheck:
    def test_linear_is_exact(self):
        w = tensor([2.0, -3.0], name="w")

        def f():
            return ad.sum_all(ad.mul(w, Tensor(np.array([1.5, 0.5]))))

        assert ad.grad_check(f, [w], eps=1e-4) < 1e-10

    def test_lstm_with_cross_entropy(self):
        rng = np.random.default_rng(5)
        p = lstm_params(rng, 3, 4)
        emb = tensor(rng.uniform(-0.1, 0.1, (6, 3)), name="emb")

        def f():
            x = ad.embedding_lookup(emb, 2)
            h, _ = ad.lstm_cell(x, Tensor(np.zeros(4)), Tensor(np.zeros(4)), p)
            loss, _ = ad.softmax_cross_entropy(ad.dense(h, head_w, head_b), true_id=3)
            return loss

        head_w = tensor(rng.normal(size=(4, 5)))
        head_b = tensor(np.zeros(5))
        params = [emb, p.w_x, p.w_h, p.b, head_w, head_b]
        assert ad.grad_check(f, params, eps=1e-4) < 1e-4


class TestMiscOps:
    def test_blend_passthrough_is_exact(self):
        prev = tensor([[0.25, -1.5]])
        new = tensor([[9.0, 9.0]])
        out = ad.blend(prev, new, np.array([[0.0]]))
        assert out.data.tobytes() == prev.data.tobytes()

    def test_attention_ops_finite_difference(self):
        rng = np.random.default_rng(6)
        q = tensor(rng.normal(size=(2, 3)))
        keys = tensor(rng.normal(size=(2, 4, 3)))
        values = tensor(rng.normal(size=(2, 4, 5)))
        mask = np.array([[True, True, True, False], [True, True, True, True]])
        probe = tensor(rng.normal(size=(2, 5)), grad=False)

        def f():
            w = ad.masked_softmax(ad.attn_scores(q, keys), mask)
            ctx = ad.attn_combine(w, values)
            return ad.sum_all(ad.mul(ctx, probe))

        assert ad.grad_check(f, [q, keys, values], eps=1e-4) < 1e-4

    def test_masked_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(7)
        s = Tensor(rng.normal(size=(3, 5)))
        mask = rng.random((3, 5)) > 0.4
        mask[:, 0] = True
        w = ad.masked_softmax(s, mask)
        assert np.allclose(w.data.sum(axis=1), 1.0)
        assert np.all(w.data[~mask] == 0.0)

    def test_tensor_rejects_nan(self):
        with pytest.raises(NumericError):
            Tensor(np.array([1.0, np.nan]))


class TestDeterminism:
    def test_identical_seeds_identical_updates(self):
        def run():
            rng = np.random.default_rng(11)
            w = tensor(rng.normal(size=(3, 3)), name="w")
            state = AdamState(base_lr=0.01)
            for step in range(5):
                ad.zero_grads([w])
                with Trace() as tr:
                    loss = ad.sum_all(ad.mul(w, w))
                tr.backward(loss)
                ad.adam_step([w], state, epoch=0)
            return w.data.copy()

        assert run().tobytes() == run().tobytes()
