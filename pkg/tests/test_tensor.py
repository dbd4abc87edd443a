import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from graphtrans import tensor as T
from graphtrans.errors import DegenerateRowError, DeterminismError, GraphTransError, ParameterError, ShapeError


def _fd_grad(f, x, step=1e-5):
    """Central differences of a scalar numpy function, independent of the tape."""
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (f(xp) - f(xm)) / (2 * step)
    return g


def _rel(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8))


# ---------------------------------------------------------------- matmul


def test_matmul_identity():
    out = T.matmul(T.Tensor(np.eye(2)), T.Tensor([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])


def test_matmul_hand_example():
    out = T.matmul(T.Tensor([[1.0, 2.0]]), T.Tensor([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.data, [[11]])


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    a0, b0 = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    w = rng.normal(size=(3, 2))
    with T.precision(64), T.Tape():
        a, b = T.parameter(a0), T.parameter(b0)
        T.backward(T.tsum(T.mul(T.matmul(a, b), w)))
        ga, gb = a.grad, b.grad
    assert _rel(ga, _fd_grad(lambda x: np.sum((x @ b0) * w), a0)) < 1e-6
    assert _rel(gb, _fd_grad(lambda x: np.sum((a0 @ x) * w), b0)) < 1e-6


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))


# ---------------------------------------------------------------- softmax


def test_masked_softmax_uniform():
    out = T.masked_softmax(T.Tensor([0.0, 0.0, 0.0]), np.array([True, True, True]))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, rtol=1e-6)


def test_masked_softmax_excludes_masked_slot():
    out = T.masked_softmax(T.Tensor([5.0, 5.0, 5.0]), np.array([True, True, False]))
    np.testing.assert_allclose(out.data, [0.5, 0.5, 0.0])
    assert out.data[2] == 0.0


def test_masked_softmax_reference_values():
    with T.precision(64):
        out = T.masked_softmax(T.Tensor([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(out.data, [0.09003057, 0.24472847, 0.66524096], atol=1e-8)


def test_masked_softmax_fully_masked_row_raises():
    with pytest.raises(DegenerateRowError):
        T.masked_softmax(T.Tensor([[1.0, 2.0], [0.0, 0.0]]), np.array([[True, False], [False, False]]))


def test_masked_softmax_large_logits_stable():
    out = T.masked_softmax(T.Tensor([1000.0, 1001.0]))
    assert np.all(np.isfinite(out.data))


@st.composite
def _logits_and_mask(draw):
    rows = draw(st.integers(1, 4))
    cols = draw(st.integers(1, 6))
    logits = draw(hnp.arrays(np.float64, (rows, cols), elements=st.floats(-20, 20)))
    mask = draw(hnp.arrays(np.bool_, (rows, cols)))
    mask[:, 0] = True
    shift = draw(hnp.arrays(np.float64, (rows, 1), elements=st.floats(-50, 50)))
    return logits, mask, shift


@settings(max_examples=100, deadline=None)
@given(_logits_and_mask())
def test_masked_softmax_rows_and_shift_invariance(case):
    logits, mask, shift = case
    with T.precision(64):
        p = T.masked_softmax(T.Tensor(logits), mask).data
        q = T.masked_softmax(T.Tensor(logits + shift), mask).data
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all(p[~mask] == 0.0)
    np.testing.assert_allclose(p, q, atol=1e-6)


def test_log_softmax_matches_log_of_softmax():
    x = np.random.default_rng(1).normal(size=(3, 5))
    with T.precision(64):
        np.testing.assert_allclose(T.log_softmax(T.Tensor(x)).data, np.log(T.softmax(T.Tensor(x)).data), atol=1e-12)


# ---------------------------------------------------------------- layer norm


def test_layer_norm_constant_row_collapses_to_bias():
    out = T.layer_norm(T.Tensor([[3.0, 3.0, 3.0]]), T.Tensor(np.ones(3)), T.Tensor(np.zeros(3)))
    np.testing.assert_array_equal(out.data, [[0, 0, 0]])


def test_layer_norm_standardized_input_unchanged():
    out = T.layer_norm(T.Tensor([[1.0, -1.0]]), T.Tensor(np.ones(2)), T.Tensor(np.zeros(2)), eps=0.0)
    np.testing.assert_allclose(out.data, [[1, -1]])


def test_layer_norm_gradient():
    rng = np.random.default_rng(2)
    x0, g0, b0 = rng.normal(size=(2, 4)), rng.normal(size=4), rng.normal(size=4)
    w = rng.normal(size=(2, 4))

    def f(x):
        mu = x.mean(-1, keepdims=True)
        var = x.var(-1, keepdims=True)
        return np.sum(((x - mu) / np.sqrt(var + 1e-5) * g0 + b0) * w)

    with T.precision(64), T.Tape():
        x = T.parameter(x0)
        T.backward(T.tsum(T.mul(T.layer_norm(x, T.Tensor(g0), T.Tensor(b0)), w)))
        grad = x.grad
    assert _rel(grad, _fd_grad(f, x0)) < 1e-6


# ---------------------------------------------------------------- dropout


def test_dropout_zero_rate_is_identity():
    x = T.Tensor(np.arange(6.0))
    for training in (True, False):
        np.testing.assert_array_equal(T.dropout(x, 0.0, training, T.make_rng(0)).data, x.data)


def test_dropout_eval_mode_is_identity():
    x = T.Tensor(np.arange(6.0))
    np.testing.assert_array_equal(T.dropout(x, 0.5, False, T.make_rng(0)).data, x.data)


def test_dropout_statistics():
    x = np.random.default_rng(3).uniform(1.0, 2.0, size=10**6)
    out = T.dropout(T.Tensor(x), 0.5, True, T.make_rng(7)).data
    survival = np.mean(out != 0)
    assert abs(survival - 0.5) < 0.002
    assert abs(out.mean() - x.mean()) / x.mean() < 0.01


@pytest.mark.parametrize("p", [-0.1, 1.0, 1.5])
def test_dropout_rejects_bad_rate(p):
    with pytest.raises(ParameterError):
        T.dropout(T.Tensor(np.ones(3)), p, True, T.make_rng(0))


# ---------------------------------------------------------------- backward


def test_backward_sum():
    with T.Tape():
        x = T.parameter(np.array([1.0, 2.0, 3.0]))
        loss = T.tsum(x)
        T.backward(loss)
    np.testing.assert_array_equal(x.grad, [1, 1, 1])
    assert loss.grad == pytest.approx(1.0)


def test_backward_square():
    with T.Tape():
        x = T.parameter(np.array([1.0, 2.0]))
        T.backward(T.tsum(T.mul(x, x)))
    np.testing.assert_array_equal(x.grad, [2, 4])


def test_backward_reused_tensor_accumulates_once_per_use():
    with T.Tape():
        x = T.parameter(np.array([3.0]))
        y = T.add(T.mul(x, 2.0), T.mul(x, x))
        T.backward(T.tsum(y))
    np.testing.assert_allclose(x.grad, [2 + 2 * 3.0])


def test_backward_requires_scalar():
    with T.Tape():
        x = T.parameter(np.ones(3))
        with pytest.raises(ShapeError):
            T.backward(T.mul(x, 2.0))


def test_backward_after_tape_released_raises():
    with T.Tape():
        x = T.parameter(np.ones(3))
        loss = T.tsum(x)
    with pytest.raises(GraphTransError):
        T.backward(loss)


def test_no_grad_records_nothing():
    with T.Tape() as tape:
        x = T.parameter(np.ones(3))
        with T.no_grad():
            T.tsum(T.mul(x, x))
        assert len(tape) == 0


def test_grad_shape_matches_data():
    with T.Tape():
        x = T.parameter(np.ones((2, 3)))
        b = T.parameter(np.ones(3))
        T.backward(T.tsum(T.add(x, b)))
    assert x.grad.shape == x.shape and b.grad.shape == b.shape
    np.testing.assert_array_equal(b.grad, [2, 2, 2])


def test_tape_records_in_topological_order():
    with T.Tape() as tape:
        x = T.parameter(np.ones(2))
        y = T.relu(T.mul(x, 3.0))
        T.tsum(y)
        seen = set()
        for inputs, out, _ in tape.entries:
            for inp in inputs:
                if inp.tape is tape and inp.trace_id is not None:
                    assert inp.trace_id in seen
            seen.add(out.trace_id)


def test_replay_determinism_bitwise():
    rng = np.random.default_rng(4)
    x0, w0 = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))

    def run():
        with T.Tape():
            w = T.parameter(w0)
            h = T.dropout(T.relu(T.matmul(T.Tensor(x0), w)), 0.3, True, T.make_rng(11))
            T.backward(T.tsum(T.log_softmax(h)))
            return w.grad.copy()

    assert np.array_equal(run(), run())


# ---------------------------------------------------------------- grad_check


def test_grad_check_linear_quadratic_exact():
    rng = np.random.default_rng(5)
    with T.precision(64):
        w = T.parameter(rng.normal(size=(3, 3)))
        x = T.Tensor(rng.normal(size=(3,)))

        def forward():
            y = T.matmul(T.reshape(x, (1, 3)), w)
            return T.tsum(T.mul(y, y))

        assert T.grad_check(forward, [w]) < 1e-7


def test_grad_check_detects_wrong_gradient():
    with T.precision(64):
        x = T.parameter(np.array([1.0, 2.0]))

        def bad_square(t):
            return T._make(t.data**2, (t,), lambda g: (g * t.data,))  # missing factor 2

        assert T.grad_check(lambda: T.tsum(bad_square(x)), [x]) > 0.1


def test_grad_check_rejects_nondeterministic_forward():
    counter = iter(range(100))
    with T.precision(64):
        x = T.parameter(np.array([1.0]))
        with pytest.raises(DeterminismError):
            T.grad_check(lambda: T.tsum(T.mul(x, float(next(counter)))), [x])


def test_precision_switch():
    with T.precision(64):
        assert T.Tensor([1.0]).data.dtype == np.float64
    assert T.Tensor([1.0]).data.dtype == np.float32


def test_named_tensors_flattens_nested_containers():
    tree = {"a": T.zeros(2), "b": [T.zeros(1), {"c": T.zeros(3)}]}
    assert list(T.named_tensors(tree)) == ["a", "b.0", "b.1.c"]
