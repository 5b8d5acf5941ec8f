import zlib
from math import log

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridq import nn
from hybridq.errors import NumericError, ShapeError

from gradcases import CASES, rel_error
from oracles import adam_reference, naive_conv2d


# ---------------------------------------------------------------------------
# conv
# ---------------------------------------------------------------------------


def test_conv_scaling():
    out = nn.conv2d(np.ones((1, 3, 3)), np.full((1, 1, 1, 1), 2.0))
    np.testing.assert_array_equal(out, np.full((1, 3, 3), 2.0))


def test_conv_single_window(rng):
    x = rng.normal(size=(1, 4, 4))
    w = rng.normal(size=(1, 1, 4, 4))
    out = nn.conv2d(x, w, stride=2)
    assert out.shape == (1, 1, 1)
    assert out[0, 0, 0] == pytest.approx(float(np.sum(x[0] * w[0, 0])), abs=1e-12)


def test_conv_kernel_too_large():
    with pytest.raises(ShapeError):
        nn.conv2d(np.ones((1, 2, 2)), np.ones((1, 1, 3, 3)))


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        nn.conv2d(np.ones((2, 4, 4)), np.ones((1, 1, 3, 3)))


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("padding", [0, 1])
def test_conv_matches_naive(rng, stride, padding):
    x = rng.normal(size=(3, 7, 7))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    np.testing.assert_allclose(nn.conv2d(x, w, b, stride, padding), naive_conv2d(x, w, b, stride, padding), atol=1e-12)


def test_conv_batched_equals_single(rng):
    x = rng.normal(size=(3, 2, 6, 6))
    w = rng.normal(size=(2, 2, 3, 3))
    batch = nn.conv2d(x, w, padding=1)
    for i in range(3):
        np.testing.assert_allclose(batch[i], nn.conv2d(x[i], w, padding=1), atol=1e-13)


def test_conv_backward_zero_upstream(rng):
    x = rng.normal(size=(2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    dx, dw, db = nn.conv2d_backward(np.zeros((3, 3, 3)), x, w)
    assert not dx.any() and not dw.any() and not db.any()


def test_conv_backward_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        nn.conv2d_backward(np.zeros((3, 4, 4)), rng.normal(size=(2, 5, 5)), rng.normal(size=(3, 2, 3, 3)))


# ---------------------------------------------------------------------------
# dense, activations, losses
# ---------------------------------------------------------------------------


def test_dense_identity(rng):
    x = rng.normal(size=4)
    np.testing.assert_array_equal(nn.dense(x, np.eye(4), np.zeros(4)), x)


def test_dense_zero_weights():
    np.testing.assert_array_equal(nn.dense(np.ones(5), np.zeros((3, 5)), np.array([1.0, 2.0, 3.0])), [1, 2, 3])


def test_dense_mismatch():
    with pytest.raises(ShapeError):
        nn.dense(np.ones(4), np.zeros((3, 5)), np.zeros(3))


def test_activation_values():
    assert nn.leaky_relu(-1.0) == pytest.approx(-0.2)
    assert nn.tanh(0.0) == 0.0
    assert nn.sigmoid(0.0) == 0.5
    assert nn.relu(-3.0) == 0.0


def test_sigmoid_extremes_finite():
    y = nn.sigmoid(np.array([-800.0, 800.0]))
    assert np.all(np.isfinite(y))
    np.testing.assert_allclose(y, [0.0, 1.0])


def test_bce_values():
    assert nn.bce_with_logits(0.0, 1) == pytest.approx(log(2), abs=1e-6)
    assert nn.bce_with_logits(30.0, 1) < 1e-12
    assert nn.bce_with_logits(-30.0, 0) < 1e-12
    assert np.isfinite(nn.bce_with_logits(-1000.0, 1))


def test_bce_non_finite():
    with pytest.raises(NumericError):
        nn.bce_with_logits(float("nan"), 1)


def test_mse_value():
    assert nn.mse([1.0, 3.0], [0.0, 0.0]) == pytest.approx(5.0)


def test_softmax_ce_uniform():
    loss, _ = nn.softmax_cross_entropy(np.zeros((2, 4)), np.array([0, 3]))
    assert loss == pytest.approx(log(4))


@pytest.mark.parametrize("name", sorted(CASES))
def test_finite_difference(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(10):
        analytic, numeric = CASES[name](rng)
        assert rel_error(analytic, numeric) < 1e-4


# ---------------------------------------------------------------------------
# adam
# ---------------------------------------------------------------------------


def test_adam_zero_grad():
    p = np.array([1.0, -2.0])
    state = nn.AdamState.like(p)
    out = nn.adam_update(p, np.zeros(2), state, 0.1)
    np.testing.assert_array_equal(out, p)
    assert state.t == 1


def test_adam_matches_reference(rng):
    p = rng.normal(size=(2, 3))
    grads = [rng.normal(size=(2, 3)) for _ in range(7)]
    state = nn.AdamState.like(p)
    q = p
    for g in grads:
        q = nn.adam_update(q, g, state, 0.01)
    np.testing.assert_allclose(q, adam_reference(p, grads, 0.01), atol=1e-12)
    assert state.t == 7


def test_adam_first_step_magnitude():
    # bias correction makes the first step lr * sign(grad)
    p = np.zeros(3)
    out = nn.adam_update(p, np.array([0.5, -3.0, 1e-3]), nn.AdamState.like(p), 0.1)
    np.testing.assert_allclose(out, [-0.1, 0.1, -0.1], rtol=1e-4)


def test_adam_shape_mismatch():
    p = np.zeros(3)
    with pytest.raises(ShapeError):
        nn.adam_update(p, np.zeros(2), nn.AdamState.like(p), 0.1)


def test_adam_dict_step():
    params = {"a": np.ones(2), "b": np.zeros(1)}
    opt = nn.Adam(lr=0.5)
    opt.step(params, {"a": np.ones(2)})
    np.testing.assert_allclose(params["a"], [0.5, 0.5])
    assert "b" not in opt.states


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    k=st.integers(1, 4),
    stride=st.integers(1, 3),
    padding=st.integers(0, 2),
    extra=st.integers(0, 4),
)
def test_conv_is_linear_in_input(seed, k, stride, padding, extra):
    rng = np.random.default_rng(seed)
    size = max(k - 2 * padding, 1) + extra
    x1, x2 = rng.normal(size=(2, 2, size, size))
    w = rng.normal(size=(3, 2, k, k))
    a, b = rng.normal(size=2)
    lhs = nn.conv2d(a * x1 + b * x2, w, stride=stride, padding=padding)
    rhs = a * nn.conv2d(x1, w, stride=stride, padding=padding) + b * nn.conv2d(x2, w, stride=stride, padding=padding)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)
    assert lhs.shape[1] == nn.conv_output_size(size, k, stride, padding)


@settings(max_examples=40, deadline=None)
@given(x=st.floats(-50, 50))
def test_activation_ranges(x):
    assert -1 <= nn.tanh(x) <= 1
    assert 0 <= nn.sigmoid(x) <= 1
    assert nn.bce_with_logits(x, 1) >= 0
