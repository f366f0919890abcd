"""Tensor engine: forward semantics, backward rules, Adam, gradient checker."""

import numpy as np
import pytest

from pointformer.errors import ConfigError, GradientError, NumericError, ShapeError
from pointformer.gradcheck import gradient_check
from pointformer.optim import Adam
from pointformer.tensor import (
    Tape,
    Tensor,
    add,
    concat,
    gather_rows,
    layer_norm,
    log_softmax,
    matmul,
    max_reduce,
    mean,
    mul,
    relu,
    reshape,
    scatter_rows,
    segment_max,
    sigmoid,
    softmax,
    sub,
    tensor_sum,
    transpose,
)


def leaf(data, dtype=np.float64):
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True, dtype=dtype)


def rand_leaf(rng, shape, dtype=np.float64):
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=dtype)


class TestForwardSemantics:
    def test_matmul_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert np.allclose(matmul(a, b).data, [[1, 2], [3, 4]])

    def test_matmul_hand_case(self):
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.shape == (1, 1)
        assert out.data[0, 0] == pytest.approx(11.0)

    def test_matmul_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))

    def test_softmax_symmetry(self):
        out = softmax(Tensor([0.0, 0.0]), axis=-1)
        assert np.allclose(out.data, [0.5, 0.5])

    def test_softmax_no_overflow(self):
        out = softmax(Tensor([1000.0, 1000.0, 1000.0]), axis=-1)
        assert np.all(np.isfinite(out.data))
        assert np.allclose(out.data, 1.0 / 3.0)

    def test_softmax_reference_values(self):
        # 50-digit evaluation of exp(x_i)/sum(exp(x_j)) for x = [1, 2, 3]
        expected = [0.090030573170380457998, 0.24472847105479765247, 0.66524095577482188953]
        out = softmax(Tensor(np.array([1.0, 2.0, 3.0])), axis=-1)
        assert np.allclose(out.data, expected, rtol=0, atol=1e-15)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        out = softmax(Tensor(rng.standard_normal((5, 7)) * 10, dtype=np.float32), axis=-1)
        assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)
        assert np.all(out.data > 0) and np.all(out.data < 1)

    def test_softmax_rejects_non_finite(self):
        with pytest.raises(NumericError):
            softmax(Tensor([np.nan, 0.0]), axis=-1)

    def test_layer_norm_constant_slice(self):
        x = Tensor([[5.0, 5.0, 5.0, 5.0]])
        out = layer_norm(x, leaf(np.ones(4)), leaf(np.zeros(4)))
        assert np.allclose(out.data, 0.0, atol=1e-6)

    def test_layer_norm_two_points(self):
        out = layer_norm(Tensor([[1.0, 3.0]]), leaf(np.ones(2)), leaf(np.zeros(2)))
        assert np.allclose(out.data, [[-1.0, 1.0]], atol=1e-4)

    def test_layer_norm_rejects_short_axis(self):
        with pytest.raises(ShapeError):
            layer_norm(Tensor([[1.0]]), leaf(np.ones(1)), leaf(np.zeros(1)))

    def test_sigmoid_at_zero(self):
        assert sigmoid(Tensor([0.0])).data[0] == pytest.approx(0.5)

    def test_max_reduce_values_and_ties(self):
        values, idx = max_reduce(Tensor([[1.0, 7.0], [4.0, 2.0]]), axis=0)
        assert np.allclose(values.data, [4.0, 7.0])
        assert idx.tolist() == [1, 0]
        # exact tie breaks toward the lowest index
        _, tie_idx = max_reduce(Tensor([[2.0], [2.0]]), axis=0)
        assert tie_idx.tolist() == [0]

    def test_scatter_gather_round_trip(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((6, 3)))
        perm = rng.permutation(6)
        back = scatter_rows(gather_rows(x, perm), perm, 6)
        assert np.allclose(back.data, x.data)

    def test_gather_out_of_range(self):
        with pytest.raises(IndexError):
            gather_rows(Tensor(np.zeros((3, 2))), [0, 3])

    def test_segment_max_semantics(self):
        x = Tensor([[1.0, -5.0], [2.0, -1.0], [0.5, 9.0]])
        out = segment_max(x, [0, 0, 2], num_segments=3)
        assert np.allclose(out.data, [[2.0, -1.0], [0.0, 0.0], [0.5, 9.0]])


class TestBackward:
    def test_square_gradient(self):
        x = leaf(3.0)
        with Tape() as tape:
            loss = mul(x, x)
        tape.backward(loss)
        assert x.grad == pytest.approx(6.0)

    def test_softmax_sum_is_constant(self):
        x = leaf([0.3, -1.2, 2.0])
        with Tape() as tape:
            loss = tensor_sum(softmax(x, axis=-1))
        tape.backward(loss)
        assert np.allclose(x.grad, 0.0, atol=1e-12)

    def test_repeated_backward_accumulates(self):
        x = leaf(2.0)
        with Tape() as tape:
            loss = mul(x, x)
        tape.backward(loss)
        tape.backward(loss)
        assert x.grad == pytest.approx(8.0)

    def test_non_scalar_loss_rejected(self):
        x = leaf([1.0, 2.0])
        with Tape() as tape:
            y = mul(x, x)
        with pytest.raises(GradientError):
            tape.backward(y)

    def test_off_tape_loss_rejected(self):
        x = leaf(1.0)
        with Tape() as tape:
            pass
        with pytest.raises(GradientError):
            tape.backward(x)

    def test_shared_weight_multi_use(self):
        # one tensor consumed twice must receive both contributions
        x = leaf(3.0)
        with Tape() as tape:
            loss = add(mul(x, x), mul(x, 2.0))
        tape.backward(loss)
        assert x.grad == pytest.approx(8.0)

    def test_max_reduce_gradient_is_one_hot(self):
        rng = np.random.default_rng(2)
        x = leaf(rng.standard_normal((4, 5)))
        with Tape() as tape:
            values, idx = max_reduce(x, axis=0)
            loss = tensor_sum(values)
        tape.backward(loss)
        expected = np.zeros((4, 5))
        expected[idx, np.arange(5)] = 1.0
        assert np.array_equal(x.grad, expected)

    def test_segment_max_empty_segment_gets_no_gradient(self):
        x = leaf(np.array([[1.0, 2.0], [3.0, 0.5]]))
        with Tape() as tape:
            out = segment_max(x, [1, 1], num_segments=3)
            loss = tensor_sum(out)
        tape.backward(loss)
        assert np.array_equal(x.grad, [[0.0, 1.0], [1.0, 0.0]])

    def test_tape_replay_is_deterministic(self):
        def run():
            rng = np.random.default_rng(7)
            x = Tensor(rng.standard_normal((6, 4)), requires_grad=True)
            w = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
            with Tape() as tape:
                y = softmax(matmul(x, w), axis=-1)
                loss = tensor_sum(mul(y, y))
            tape.backward(loss)
            return loss.data.copy(), x.grad.copy(), w.grad.copy()

        first, second = run(), run()
        assert np.array_equal(first[0], second[0])
        assert np.array_equal(first[1], second[1])
        assert np.array_equal(first[2], second[2])


class TestGradientOracle:
    """Central finite differences are the ground truth for every backward rule."""

    def test_matmul_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(3)
        a, b = rand_leaf(rng, (4, 3)), rand_leaf(rng, (3, 5))
        report = gradient_check(lambda a, b: tensor_sum(matmul(a, b)), [a, b])
        assert report.passed, report
        # d sum(AB) / dA is B^T broadcast across rows
        assert np.allclose(a.grad, np.tile(b.data.sum(axis=1), (4, 1)), atol=1e-12)

    def test_batched_matmul_gradient(self):
        rng = np.random.default_rng(4)
        a, b = rand_leaf(rng, (2, 3, 4)), rand_leaf(rng, (4, 5))
        report = gradient_check(
            lambda a, b: tensor_sum(mul(matmul(a, b), matmul(a, b))), [a, b]
        )
        assert report.passed, report

    @pytest.mark.parametrize(
        "name,fn,shapes",
        [
            ("add", lambda a, b: tensor_sum(mul(add(a, b), add(a, b))), [(3, 4), (4,)]),
            ("sub", lambda a, b: tensor_sum(mul(sub(a, b), sub(a, b))), [(3, 4), (3, 4)]),
            ("mul", lambda a, b: tensor_sum(mul(mul(a, b), mul(a, b))), [(5,), (5,)]),
            ("sigmoid", lambda x: tensor_sum(mul(sigmoid(x), sigmoid(x))), [(6,)]),
            ("relu", lambda x: tensor_sum(mul(relu(x), relu(x))), [(7,)]),
            ("softmax", lambda x: tensor_sum(mul(softmax(x, -1), softmax(x, -1))), [(3, 5)]),
            ("log_softmax", lambda x: tensor_sum(mul(log_softmax(x, -1), x)), [(2, 6)]),
            ("mean", lambda x: mean(mul(x, x)), [(4, 3)]),
            ("transpose", lambda x: tensor_sum(mul(transpose(x, (1, 0)), transpose(x, (1, 0)))), [(3, 4)]),
            ("reshape", lambda x: tensor_sum(mul(reshape(x, (8,)), reshape(x, (8,)))), [(2, 4)]),
            ("concat", lambda a, b: tensor_sum(mul(concat([a, b], 1), concat([a, b], 1))), [(2, 3), (2, 2)]),
            ("max_reduce", lambda x: tensor_sum(mul(max_reduce(x, 1)[0], max_reduce(x, 1)[0])), [(4, 6)]),
            ("sum_axis", lambda x: tensor_sum(mul(tensor_sum(x, 1), tensor_sum(x, 1))), [(3, 5)]),
        ],
    )
    def test_elementwise_suite_gradients(self, name, fn, shapes):
        rng = np.random.default_rng(hash(name) % 2**32)
        inputs = [rand_leaf(rng, s) for s in shapes]
        report = gradient_check(fn, inputs)
        assert report.passed, f"{name}: {report}"

    def test_layer_norm_gradient(self):
        rng = np.random.default_rng(5)
        x = rand_leaf(rng, (3, 6))
        gain = leaf(rng.uniform(0.5, 1.5, 6))
        bias = leaf(rng.standard_normal(6))
        report = gradient_check(
            lambda x, g, b: tensor_sum(mul(layer_norm(x, g, b), layer_norm(x, g, b))),
            [x, gain, bias],
        )
        assert report.passed, report

    def test_gather_scatter_segment_gradients(self):
        rng = np.random.default_rng(6)
        x = rand_leaf(rng, (6, 3))

        def fn(x):
            g = gather_rows(x, [0, 2, 2, 5])
            s = scatter_rows(g, [1, 0, 3, 2], 4)
            m = segment_max(s, [0, 0, 1, 1], 2)
            return tensor_sum(mul(m, m))

        report = gradient_check(fn, [x])
        assert report.passed, report

    def test_random_shapes_property(self):
        # invariant: every backward rule stays under 1e-4 relative error on
        # randomized shapes with extents up to 8
        rng = np.random.default_rng(8)
        for trial in range(5):
            m, k, n = rng.integers(2, 9, size=3)
            a, b = rand_leaf(rng, (int(m), int(k))), rand_leaf(rng, (int(k), int(n)))

            def fn(a, b):
                y = softmax(matmul(a, b), axis=-1)
                return tensor_sum(mul(y, matmul(a, b)))

            report = gradient_check(fn, [a, b])
            assert report.passed, f"trial {trial}: {report}"

    def test_linear_function_is_exact(self):
        rng = np.random.default_rng(9)
        x = rand_leaf(rng, (5,))
        report = gradient_check(lambda x: tensor_sum(mul(x, 3.0)), [x], tolerance=1e-7)
        assert report.passed and report.max_rel_error < 1e-7

    def test_corrupted_backward_rule_is_flagged(self):
        # negative control: register a square op whose backward says 3x
        def bad_square(x):
            out = Tensor(x.data * x.data)
            from pointformer.tensor import active_tape

            tape = active_tape()
            if tape is not None:
                tape.record(out, (x,), lambda g: (g * 3.0 * x.data,))
            return out

        rng = np.random.default_rng(10)
        x = rand_leaf(rng, (4,))
        report = gradient_check(lambda x: tensor_sum(bad_square(x)), [x])
        assert not report.passed
        assert report.failures

    def test_gradient_check_requires_float64(self):
        x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
        with pytest.raises(GradientError):
            gradient_check(lambda x: tensor_sum(x), [x])


class TestAdam:
    def test_zero_gradient_keeps_parameter(self):
        w = leaf([1.0, -2.0])
        before = w.data.copy()
        opt = Adam([w], lr=0.1)
        opt.step()
        assert np.array_equal(w.data, before)

    def test_descends_on_scalar_square(self):
        w = leaf(1.0)
        opt = Adam([w], lr=0.05)
        with Tape() as tape:
            loss = mul(w, w)
        tape.backward(loss)
        opt.step()
        assert float(w.data) ** 2 < 1.0

    def test_reaches_quadratic_minimizer(self):
        # closed-form oracle: argmin of 0.5 w^T A w - b^T w is A^{-1} b
        A = np.array([[3.0, 0.5], [0.5, 1.0]])
        b = np.array([1.0, -2.0])
        w_star = np.linalg.solve(A, b)
        w = leaf([1.0, 1.0])
        opt = Adam([w], lr=0.1)
        for _ in range(200):
            with Tape() as tape:
                wr = reshape(w, (1, 2))
                quad = mul(tensor_sum(mul(matmul(wr, A), wr)), 0.5)
                loss = sub(quad, tensor_sum(mul(w, b)))
            tape.backward(loss)
            opt.step()
            opt.zero_grad()
        assert np.linalg.norm(w.data - w_star) < 1e-3

    def test_moment_shapes_and_step_counter(self):
        w = leaf(np.zeros((2, 3)))
        opt = Adam([w])
        assert opt.m[0].shape == (2, 3) and opt.v[0].shape == (2, 3)
        w.grad[...] = 1.0
        opt.step()
        opt.step()
        assert opt.t == 2

    def test_rejects_non_positive_lr(self):
        with pytest.raises(ConfigError):
            Adam([leaf(1.0)], lr=0.0)
