import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from chfuq import engine as E
from chfuq.engine import Tensor


def test_relu_forward():
    out = E.relu(Tensor(np.array([[-1.0, 0.0, 2.0]])))
    np.testing.assert_array_equal(out.data, [[0.0, 0.0, 2.0]])


def test_softplus_at_zero():
    assert E.softplus(Tensor(0.0)).item() == pytest.approx(np.log(2.0), abs=1e-15)


def test_softplus_large_argument_is_finite_and_linear():
    z = np.array([[30.0, 100.0, 1000.0]])
    out = E.softplus(Tensor(z), beta=2.0).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out[0, 1:], z[0, 1:], rtol=1e-12)


def test_matmul_shapes():
    a = Tensor(np.ones((2, 3)))
    assert (a @ Tensor(np.ones((3, 1)))).shape == (2, 1)
    with pytest.raises(E.ShapeError) as info:
        a @ Tensor(np.ones((2, 1)))
    assert "matmul" in str(info.value)
    assert "(2, 3)" in str(info.value) and "(2, 1)" in str(info.value)


def test_broadcast_only_row_vectors():
    x = Tensor(np.ones((4, 3)))
    assert (x + Tensor(np.ones((1, 3)))).shape == (4, 3)
    with pytest.raises(E.ShapeError):
        x + Tensor(np.ones((4, 2)))


def test_softplus_gradient_at_zero():
    z = Tensor(0.0, requires_grad=True)
    grads = E.backward(E.softplus(z))
    assert grads[z][0, 0] == pytest.approx(0.5)


def test_relu_gradient_negative_side():
    z = Tensor(-1.0, requires_grad=True)
    grads = E.backward(E.relu(z))
    assert grads[z][0, 0] == 0.0


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        E.backward(x * 2.0)


def test_non_trainable_leaf_receives_nothing():
    a = Tensor(np.ones((1, 2)), requires_grad=True)
    b = Tensor(np.ones((1, 2)), requires_grad=False)
    grads = E.backward(E.sum(a * b))
    assert a in grads and b not in grads
    assert b.grad is None


def test_gradient_accumulates_over_reuse():
    x = Tensor(3.0, requires_grad=True)
    grads = E.backward(x * x + x)
    assert grads[x][0, 0] == pytest.approx(7.0)


def test_mean_of_squares_matches_finite_differences(rng):
    point = rng.normal(size=(4, 3))
    err = E.finite_difference_check(lambda t: E.mean(E.square(t[0])), point)
    assert err < 1e-4


def test_linear_function_is_exact(rng):
    w = rng.normal(size=(3, 1))
    err = E.finite_difference_check(lambda t: E.sum(t[0] @ Tensor(w)), rng.normal(size=(2, 3)))
    assert err < 1e-10


def test_finite_difference_rejects_bad_step():
    with pytest.raises(ValueError):
        E.finite_difference_check(lambda t: E.sum(t[0]), np.ones((1, 1)), step=0.0)


def test_finite_difference_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        E.finite_difference_check(lambda t: E.sum(E.log(t[0])), -np.ones((1, 2)))


@pytest.mark.parametrize("op", [
    lambda t: E.sum(E.exp(t[0]) * t[1]),
    lambda t: E.mean(E.log(E.square(t[0]) + 1.0) / (E.sqrt(E.square(t[1]) + 2.0))),
    lambda t: E.sum(E.sigmoid(t[0] - t[1])),
    lambda t: E.sum(E.softplus(t[0], beta=3.0) - E.neg(t[1])),
    lambda t: E.sum(E.mean(t[0] * t[1], axis=0)),
    lambda t: E.sum(E.sum(t[0], axis=0) * E.sum(t[1], axis=0)),
    lambda t: E.sum(E.clamp_min(t[0], 0.05) * t[1]),
])
def test_primitive_gradients(op, rng):
    point = [rng.normal(size=(3, 2)) + 0.1, rng.normal(size=(3, 2))]
    assert E.finite_difference_check(op, point) < 1e-6


@given(arrays(np.float64, (3, 2), elements=st.floats(-50, 50)))
def test_softplus_is_positive_and_above_relu(z):
    out = E.softplus(Tensor(z)).data
    assert np.all(out > 0) or np.all(z < -700)
    assert np.all(out >= np.maximum(z, 0.0) - 1e-12)


@given(arrays(np.float64, (4, 2), elements=st.floats(-10, 10)),
       arrays(np.float64, (4, 2), elements=st.floats(-10, 10)))
def test_add_sub_gradients_are_signed_ones(a, b):
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    grads = E.backward(E.sum(ta - tb))
    np.testing.assert_array_equal(grads[ta], np.ones_like(a))
    np.testing.assert_array_equal(grads[tb], -np.ones_like(b))


def test_forward_is_deterministic(rng):
    x = rng.normal(size=(5, 4))
    w = rng.normal(size=(4, 2))
    a = E.softplus(Tensor(x) @ Tensor(w)).data
    b = E.softplus(Tensor(x) @ Tensor(w)).data
    assert np.array_equal(a, b)
