import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from relcap import tensor as T
from relcap.gradcheck import check_gradients, numeric_grad, relative_error


def _rand(rng, *shape, positive=False):
    x = rng.normal(size=shape)
    return np.abs(x) + 0.5 if positive else x


# op name -> (builder(rng) -> (fn(*params) -> Tensor, [arrays]))
def _cases():
    def away_from_zero(rng, *shape):
        x = rng.normal(size=shape)
        return np.where(np.abs(x) < 0.1, 0.3, x)

    return {
        "add_broadcast": lambda r: (lambda a, b: a + b, [_rand(r, 3, 4), _rand(r, 4)]),
        "sub": lambda r: (lambda a, b: a - b, [_rand(r, 2, 3), _rand(r, 2, 1)]),
        "mul_broadcast": lambda r: (lambda a, b: a * b, [_rand(r, 3, 4), _rand(r, 1, 4)]),
        "div": lambda r: (lambda a, b: a / b, [_rand(r, 3, 2), _rand(r, 3, 2, positive=True)]),
        "matmul": lambda r: (lambda a, b: a @ b, [_rand(r, 3, 4), _rand(r, 4, 2)]),
        "matmul_batched": lambda r: (lambda a, b: a @ b, [_rand(r, 2, 3, 4), _rand(r, 4, 5)]),
        "relu": lambda r: (T.relu, [away_from_zero(r, 4, 3)]),
        "sigmoid": lambda r: (T.sigmoid, [_rand(r, 4, 3) * 3]),
        "tanh": lambda r: (T.tanh, [_rand(r, 5)]),
        "exp": lambda r: (T.exp, [_rand(r, 3, 3)]),
        "log": lambda r: (T.log, [_rand(r, 3, 3, positive=True)]),
        "sum_axis": lambda r: (lambda a: T.tsum(a, axis=1, keepdims=True), [_rand(r, 3, 4)]),
        "mean": lambda r: (lambda a: T.mean(a, axis=0), [_rand(r, 3, 4)]),
        "reshape": lambda r: (lambda a: a.reshape(6, 2), [_rand(r, 3, 4)]),
        "transpose": lambda r: (lambda a: T.transpose(a, (2, 0, 1)), [_rand(r, 2, 3, 4)]),
        "concat": lambda r: (lambda a, b: T.concat([a, b], axis=1), [_rand(r, 2, 3), _rand(r, 2, 2)]),
        "take_rows_repeat": lambda r: (lambda a: T.take_rows(a, [0, 2, 2, 1]), [_rand(r, 3, 4)]),
        "embedding": lambda r: (lambda a: T.embedding(a, [[1, 0], [1, 1]]), [_rand(r, 3, 2)]),
        "pick": lambda r: (lambda a: T.pick(a, np.array([[0, 2], [1, 1]])), [_rand(r, 2, 2, 3)]),
        "masked_fill": lambda r: (lambda a: T.masked_fill(a, np.array([[True, False, False]]), -5.0), [_rand(r, 2, 3)]),
        "scatter_matrix": lambda r: (lambda v: T.scatter_matrix(v, [0, 1, 2], [1, 2, 0], (3, 3)), [_rand(r, 3)]),
        "softmax": lambda r: (lambda a: T.softmax(a, axis=-1), [_rand(r, 3, 5)]),
        "softmax_axis0": lambda r: (lambda a: T.softmax(a, axis=0), [_rand(r, 3, 5)]),
        "log_softmax": lambda r: (T.log_softmax, [_rand(r, 2, 6)]),
        "normalize": lambda r: (T.normalize, [_rand(r, 3, 5)]),
        "layer_norm": lambda r: (T.layer_norm, [_rand(r, 3, 5), _rand(r, 5), _rand(r, 5)]),
    }


CASES = _cases()


@pytest.mark.parametrize("name", sorted(CASES))
def test_op_gradients_match_central_differences(name):
    for trial in range(4):
        rng = np.random.default_rng([trial, len(name)])
        fn, arrays = CASES[name](rng)
        params = [T.Parameter(a, f"p{k}") for k, a in enumerate(arrays)]
        proj = rng.normal(size=fn(*params).shape)

        def loss():
            return (fn(*params) * T.Tensor(proj)).sum()

        report = check_gradients(loss, params)
        assert max(report.values()) < 1e-5, (name, report)


def test_gradients_accumulate_over_backward_calls():
    p = T.Parameter(np.array([1.0, 2.0]))
    (p * p).sum().backward()
    (p * p).sum().backward()
    np.testing.assert_allclose(p.grad, 4 * p.data)


def test_shared_subexpression_gets_summed_gradient():
    p = T.Parameter(np.array(3.0))
    y = p * p
    (y + y * 2.0).backward()
    assert p.grad == pytest.approx(18.0)


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        T.Parameter(np.ones(3)).backward()


def test_no_grad_records_nothing():
    p = T.Parameter(np.ones(3))
    with T.no_grad():
        y = (p * 2.0).sum()
    assert y.op == "leaf" and not y.requires_grad


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(T.ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((4, 5))))


def test_index_errors():
    with pytest.raises(IndexError):
        T.embedding(np.ones((3, 2)), [3])
    with pytest.raises(IndexError):
        T.take_rows(np.ones((3, 2)), [5])


def test_ndarray_left_operand_dispatches_to_tensor():
    p = T.Parameter(np.ones((2, 2)))
    out = np.eye(2) @ p
    assert isinstance(out, T.Tensor)
    out.sum().backward()
    np.testing.assert_allclose(p.grad, np.ones((2, 2)))


def test_float32_is_preserved():
    p = T.Parameter(np.ones((2, 2), dtype=np.float32))
    assert (p * 2.0 + 1.0).dtype == np.float32


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-12])) == pytest.approx(1e-4)
    assert relative_error(np.array([2.0]), np.array([2.0])) == 0.0


def test_numeric_grad_of_quadratic():
    p = T.Parameter(np.array([1.0, -2.0, 0.5]))
    g = numeric_grad(lambda: (p * p).sum(), p)
    np.testing.assert_allclose(g, 2 * p.data, atol=1e-9)


finite = st.floats(-20, 20, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=5), elements=finite))
def test_softmax_rows_sum_to_one(x):
    s = T.softmax(x, axis=-1).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(s >= 0)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 6)), elements=finite))
def test_log_softmax_consistent_with_softmax(x):
    np.testing.assert_allclose(np.exp(T.log_softmax(x).data), T.softmax(x).data, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 6)), elements=finite))
def test_normalize_statistics(x):
    out = T.normalize(x).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-9)
    var = x.var(axis=-1)
    np.testing.assert_allclose(out.var(axis=-1), var / (var + T.LN_EPS), atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, st.integers(1, 8), elements=st.floats(-800, 800)))
def test_sigmoid_is_finite_and_bounded(x):
    s = T.sigmoid(x).data
    assert np.all(np.isfinite(s)) and np.all((s >= 0) & (s <= 1))
