"""Randomized finite-difference cases for every layer and loss.

Each case maps a seeded generator to ``(analytic, numeric)`` gradient
arrays for one random configuration. Shared by the unit tests and the
acceptance suite.
"""

import numpy as np

from hybridq import nn

from oracles import central_difference

H = 1e-6


def rel_error(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def away_from_zero(x, margin=1e-3):
    # keep samples off the kink of piecewise-linear activations
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin * 2, x)


def _conv_case(rng):
    c_in, c_out = rng.integers(1, 4), rng.integers(1, 4)
    k = int(rng.integers(1, 4))
    stride, padding = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    size = int(rng.integers(k, k + 4))
    x = rng.normal(size=(2, c_in, size, size))
    w = rng.normal(size=(c_out, c_in, k, k))
    b = rng.normal(size=c_out)
    out = nn.conv2d(x, w, b, stride, padding)
    up = rng.normal(size=out.shape)
    dx, dw, db = nn.conv2d_backward(up, x, w, stride, padding)
    which = rng.integers(3)
    if which == 0:
        return dx, central_difference(lambda v: np.sum(up * nn.conv2d(v, w, b, stride, padding)), x, H)
    if which == 1:
        return dw, central_difference(lambda v: np.sum(up * nn.conv2d(x, v, b, stride, padding)), w, H)
    return db, central_difference(lambda v: np.sum(up * nn.conv2d(x, w, v, stride, padding)), b, H)


def _dense_case(rng):
    n_in, n_out = rng.integers(1, 7), rng.integers(1, 7)
    x = rng.normal(size=(3, n_in))
    w = rng.normal(size=(n_out, n_in))
    b = rng.normal(size=n_out)
    up = rng.normal(size=(3, n_out))
    dx, dw, db = nn.dense_backward(up, x, w)
    which = rng.integers(3)
    if which == 0:
        return dx, central_difference(lambda v: np.sum(up * nn.dense(v, w, b)), x, H)
    if which == 1:
        return dw, central_difference(lambda v: np.sum(up * nn.dense(x, v, b)), w, H)
    return db, central_difference(lambda v: np.sum(up * nn.dense(x, w, v)), b, H)


def _pool_case(rng):
    x = rng.normal(size=(2, int(rng.integers(1, 4)), 4, 6))
    up = rng.normal(size=(x.shape[0], x.shape[1], 2, 3))
    return nn.avg_pool2d_backward(up), central_difference(lambda v: np.sum(up * nn.avg_pool2d(v)), x, H)


def _elementwise(forward, backward, uses_output):
    def case(rng):
        x = away_from_zero(rng.normal(scale=2.0, size=(4, 3)))
        up = rng.normal(size=x.shape)
        arg = forward(x) if uses_output else x
        return backward(up, arg), central_difference(lambda v: np.sum(up * forward(v)), x, H)

    return case


def _bce_case(rng):
    logit = rng.normal(scale=3.0, size=8)
    target = rng.integers(0, 2, size=8).astype(float)
    return (
        nn.bce_with_logits_backward(logit, target),
        central_difference(lambda v: np.sum(nn.bce_with_logits(v, target)), logit, H),
    )


def _mse_case(rng):
    a, b = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    return nn.mse_backward(a, b), central_difference(lambda v: nn.mse(v, b), a, H)


def _softmax_ce_case(rng):
    k = int(rng.integers(2, 6))
    logits = rng.normal(scale=2.0, size=(4, k))
    labels = rng.integers(0, k, size=4)
    _, grad = nn.softmax_cross_entropy(logits, labels)
    return grad, central_difference(lambda v: nn.softmax_cross_entropy(v, labels)[0], logits, H)


CASES = {
    "conv2d": _conv_case,
    "dense": _dense_case,
    "avg_pool2d": _pool_case,
    "leaky_relu": _elementwise(nn.leaky_relu, nn.leaky_relu_backward, False),
    "relu": _elementwise(nn.relu, nn.relu_backward, False),
    "tanh": _elementwise(nn.tanh, nn.tanh_backward, True),
    "sigmoid": _elementwise(nn.sigmoid, nn.sigmoid_backward, True),
    "bce_with_logits": _bce_case,
    "mse": _mse_case,
    "softmax_cross_entropy": _softmax_ce_case,
}
