import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import trajformer.numerics as num
from trajformer.errors import ContractError, DimensionError, NumericError

finite_rows = st.lists(
    st.floats(min_value=-50, max_value=50, allow_nan=False), min_size=1,
    max_size=12)


def leaf(values) -> num.Tensor:
    return num.Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


class TestMatmul:
    def test_identity(self):
        a = np.random.default_rng(0).normal(size=(2, 2))
        out = num.matmul(num.Tensor(np.eye(2), np.float64),
                         num.Tensor(a, np.float64))
        np.testing.assert_array_equal(out.data, a)

    def test_known_product(self):
        out = num.Tensor([[1.0, 2.0], [3.0, 4.0]]) @ num.Tensor([[5.0], [6.0]])
        np.testing.assert_array_equal(out.data, [[17.0], [39.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\) x \(2, 3\)"):
            num.Tensor(np.ones((2, 3))) @ num.Tensor(np.ones((2, 3)))

    def test_gradcheck(self):
        rng = np.random.default_rng(1)
        a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
        weights = rng.normal(size=(3, 2))
        error = num.gradcheck(lambda: ((a @ b) * weights).sum(), [a, b])
        assert error <= 1e-4


class TestSoftmax:
    def test_uniform(self):
        out = num.softmax(num.Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.data, 0.25)

    @given(finite_rows, st.floats(min_value=-100, max_value=100))
    def test_shift_invariance(self, row, shift):
        x = np.asarray(row)
        first = num.softmax(num.Tensor(x, np.float64)).data
        second = num.softmax(num.Tensor(x + shift, np.float64)).data
        np.testing.assert_allclose(first, second, atol=1e-9)

    @given(finite_rows)
    def test_normalized_and_positive(self, row):
        out = num.softmax(num.Tensor(np.asarray(row), np.float64)).data
        assert np.all(out > 0)
        assert abs(out.sum() - 1.0) <= 1e-6

    def test_axis_out_of_bounds(self):
        with pytest.raises(DimensionError):
            num.softmax(num.Tensor(np.zeros((2, 3))), axis=2)

    def test_gradcheck(self):
        rng = np.random.default_rng(2)
        x = leaf(rng.normal(size=(3, 5)))
        weights = rng.normal(size=(3, 5))
        assert num.gradcheck(
            lambda: (num.softmax(x, axis=-1) * weights).sum(), [x]) <= 1e-4


class TestLayerNorm:
    def test_constant_row_is_zero(self):
        out = num.layer_norm(num.Tensor(np.full((1, 4), 3.0), np.float64),
                             num.Tensor(np.ones(4)), num.Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_normalized_moments(self):
        x = np.random.default_rng(3).normal(3.0, 5.0, size=(6, 16))
        out = num.layer_norm(num.Tensor(x, np.float64),
                             num.Tensor(np.ones(16), np.float64),
                             num.Tensor(np.zeros(16), np.float64)).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-5)

    def test_gain_shape_mismatch(self):
        with pytest.raises(DimensionError):
            num.layer_norm(num.Tensor(np.ones((2, 4))),
                           num.Tensor(np.ones(3)), num.Tensor(np.zeros(4)))

    def test_gradcheck(self):
        rng = np.random.default_rng(4)
        x = leaf(rng.normal(size=(3, 6)))
        gain, bias = leaf(rng.normal(size=6)), leaf(rng.normal(size=6))
        weights = rng.normal(size=(3, 6))
        error = num.gradcheck(
            lambda: (num.layer_norm(x, gain, bias) * weights).sum(),
            [x, gain, bias])
        assert error <= 1e-4


OPERATIONS = [
    lambda x: num.exp(x),
    lambda x: num.log(num.exp(x) + 1.0),
    lambda x: num.tanh(x),
    lambda x: num.sigmoid(x),
    lambda x: num.softplus(x),
    lambda x: num.gelu(x),
    lambda x: x * x / (num.exp(x) + 2.0),
    lambda x: num.concat([x, x * 2.0], axis=1),
    lambda x: num.stack([x, -x], axis=0),
    lambda x: x.reshape(-1)[2:7],
    lambda x: x.transpose(1, 0) @ x,
    lambda x: x.mean(axis=0, keepdims=True) - x,
    lambda x: x[np.array([0, 0, 2])],
    lambda x: num.clip(x, -0.5, 0.5),
]


@pytest.mark.parametrize("op", OPERATIONS)
def test_operation_gradients(op):
    rng = np.random.default_rng(5)
    x = leaf(rng.normal(size=(3, 4)))
    # keep clip inputs away from its corners
    x.data[np.abs(np.abs(x.data) - 0.5) < 1e-3] += 0.01
    weights = rng.normal(size=op(x).shape)
    assert num.gradcheck(lambda: (op(x) * weights).sum(), [x]) <= 1e-4


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(100))
def test_random_configuration_gradients(seed):
    rng = np.random.default_rng(1000 + seed)
    rows, cols = int(rng.integers(3, 6)), int(rng.integers(2, 7))
    x = leaf(rng.normal(0.0, rng.uniform(0.5, 2.0), size=(rows, cols)))
    x.data[np.abs(np.abs(x.data) - 0.5) < 1e-3] += 0.01
    other = leaf(rng.normal(size=(cols, int(rng.integers(1, 5)))))
    gain, bias = leaf(rng.normal(size=cols)), leaf(rng.normal(size=cols))
    axis = int(rng.integers(0, 2))
    composite = [
        (lambda: x @ other, [x, other]),
        (lambda: num.softmax(x, axis=axis), [x]),
        (lambda: num.layer_norm(x, gain, bias), [x, gain, bias]),
    ] + [(lambda op=op: op(x), [x]) for op in OPERATIONS]
    for build, leaves in composite:
        out = build()
        weights = rng.normal(size=out.shape)
        error = num.gradcheck(lambda: (build() * weights).sum(), leaves)
        assert error <= 1e-4


class TestTape:
    def test_backward_fills_leaf_gradients(self):
        x = leaf([1.0, -2.0, 3.0])
        with num.Tape() as tape:
            loss = (x * x).sum()
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, [2.0, -4.0, 6.0])

    def test_shared_subexpression_accumulates(self):
        x = leaf([2.0])
        with num.Tape() as tape:
            y = x * 3.0
            loss = (y * y + y).sum()
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, [(2 * 6.0 + 1.0) * 3.0])

    def test_disconnected_watched_leaf_gets_zero(self):
        x, unused = leaf([1.0]), leaf([[1.0, 2.0]])
        with num.Tape() as tape:
            tape.watch(unused)
            loss = (x * 2.0).sum()
        tape.backward(loss)
        np.testing.assert_array_equal(unused.grad, np.zeros((1, 2)))

    def test_second_backward_is_rejected(self):
        x = leaf([1.0])
        with num.Tape() as tape:
            loss = (x * x).sum()
        tape.backward(loss)
        with pytest.raises(ContractError, match="consumed"):
            tape.backward(loss)

    def test_non_scalar_output_is_rejected(self):
        x = leaf([1.0, 2.0])
        with num.Tape() as tape:
            y = x * 2.0
        with pytest.raises(ContractError):
            tape.backward(y)

    def test_constants_are_not_recorded(self):
        with num.Tape() as tape:
            num.Tensor([1.0]) * 2.0
        assert tape.nodes == []


class TestNumericErrors:
    def test_log_of_non_positive(self):
        with pytest.raises(NumericError, match="log"):
            num.log(num.Tensor([1.0, 0.0]))

    def test_overflow_names_operation(self):
        with pytest.raises(NumericError, match="exp"):
            num.exp(num.Tensor([1000.0], np.float64))

    def test_item_needs_single_element(self):
        with pytest.raises(ContractError):
            num.Tensor([1.0, 2.0]).item()

    def test_unsupported_dtype(self):
        with pytest.raises(ContractError):
            num.Tensor([1], dtype=np.int32)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1, max_value=4), st.integers(min_value=1,
                                                          max_value=4))
def test_broadcast_gradients_reduce_to_operand_shape(rows, cols):
    rng = np.random.default_rng(rows * 10 + cols)
    x, bias = leaf(rng.normal(size=(rows, cols))), leaf(rng.normal(size=cols))
    with num.Tape() as tape:
        loss = (x + bias).sum()
    tape.backward(loss)
    assert bias.grad.shape == (cols,)
    np.testing.assert_allclose(bias.grad, rows)
