"""Explicit forward/backward layers on float64 numpy arrays.

Tensors are plain ``np.ndarray`` objects.  Convolutions take either a
single ``[C, H, W]`` image or a batch ``[N, C, H, W]`` and use the
cross-correlation convention (kernels are not flipped).  Every ``*_backward``
returns gradients for the inputs of the matching forward function.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericError, ShapeError

LEAKY_SLOPE = 0.2


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected [C,H,W] or [N,C,H,W] input, got shape {x.shape}")


def _check_conv(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> None:
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"kernels must be [C_out, C_in, k, k], got {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, kernels expect {w.shape[1]}")
    if stride < 1 or padding < 0:
        raise ShapeError("stride must be >= 1 and padding >= 0")
    k = w.shape[2]
    if k > x.shape[2] + 2 * padding or k > x.shape[3] + 2 * padding:
        raise ShapeError(f"kernel {k}x{k} larger than padded input {x.shape[2:]}")


def _windows(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    # (N, C, H', W', k, k) -> (N, H', W', C*k*k)
    n, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho, wo, c * k * k)


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None, stride: int = 1, padding: int = 0):
    xb, single = _as_batch(x)
    _check_conv(xb, w, stride, padding)
    cols = _windows(xb, w.shape[2], stride, padding)
    out = cols @ w.reshape(w.shape[0], -1).T  # (N, H', W', C_out)
    if b is not None:
        out = out + b
    out = out.transpose(0, 3, 1, 2)
    return out[0] if single else out


def conv2d_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0):
    """Returns ``(dx, dw, db)``."""
    xb, single = _as_batch(x)
    db_, _ = _as_batch(dout)
    _check_conv(xb, w, stride, padding)
    n, c, h, wd = xb.shape
    c_out, _, k, _ = w.shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(wd, k, stride, padding)
    if db_.shape != (n, c_out, ho, wo):
        raise ShapeError(f"upstream shape {db_.shape} != forward output {(n, c_out, ho, wo)}")
    g = db_.transpose(0, 2, 3, 1)  # (N, H', W', C_out)
    cols = _windows(xb, k, stride, padding)
    dw = (g.reshape(-1, c_out).T @ cols.reshape(-1, c * k * k)).reshape(w.shape)
    db = g.sum(axis=(0, 1, 2))
    dcols = (g @ w.reshape(c_out, -1)).reshape(n, ho, wo, c, k, k)
    dxp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    dx = dxp[:, :, padding : padding + h, padding : padding + wd]
    return (dx[0] if single else dx), dw, db


def avg_pool2d(x: np.ndarray, size: int = 2) -> np.ndarray:
    xb, single = _as_batch(x)
    n, c, h, w = xb.shape
    if h % size or w % size:
        raise ShapeError(f"spatial dims {h}x{w} not divisible by pool size {size}")
    out = xb.reshape(n, c, h // size, size, w // size, size).mean(axis=(3, 5))
    return out[0] if single else out


def avg_pool2d_backward(dout: np.ndarray, size: int = 2) -> np.ndarray:
    g, single = _as_batch(dout)
    dx = np.repeat(np.repeat(g, size, axis=2), size, axis=3) / (size * size)
    return dx[0] if single else dx


# ---------------------------------------------------------------------------
# dense
# ---------------------------------------------------------------------------


def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    if w.ndim != 2 or b.shape != (w.shape[0],):
        raise ShapeError(f"weights {w.shape} and bias {b.shape} are inconsistent")
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"input length {x.shape[-1]} != weight fan-in {w.shape[1]}")
    return x @ w.T + b


def dense_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray):
    """Returns ``(dx, dw, db)``; leading batch axes of ``x`` are summed out."""
    if dout.shape[-1] != w.shape[0] or dout.shape[:-1] != x.shape[:-1]:
        raise ShapeError(f"upstream shape {dout.shape} does not match input {x.shape}")
    g2 = dout.reshape(-1, w.shape[0])
    x2 = x.reshape(-1, w.shape[1])
    return dout @ w, g2.T @ x2, g2.sum(axis=0)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def leaky_relu(x, slope: float = LEAKY_SLOPE):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, slope * x)


def leaky_relu_backward(dout, x, slope: float = LEAKY_SLOPE):
    return dout * np.where(np.asarray(x) >= 0, 1.0, slope)


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(dout, x):
    # derivative at 0 taken from the positive branch
    return dout * (np.asarray(x) >= 0)


def tanh(x):
    return np.tanh(x)


def tanh_backward(dout, y):
    """``y`` is the forward output."""
    return dout * (1.0 - y * y)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_backward(dout, y):
    return dout * y * (1.0 - y)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def bce_with_logits(logit, target):
    """Elementwise binary cross-entropy on raw logits."""
    x = np.asarray(logit, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite logit in bce_with_logits")
    t = np.asarray(target, dtype=np.float64)
    loss = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0) - x * t
    return float(loss) if loss.ndim == 0 else loss


def bce_with_logits_backward(logit, target):
    return sigmoid(logit) - np.asarray(target, dtype=np.float64)


def mse(a, b) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(d * d))


def mse_backward(a, b):
    """Gradient of ``mse(a, b)`` with respect to ``a``."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return 2.0 * d / d.size


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch. Returns ``(loss, dlogits)``."""
    logits = np.atleast_2d(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -float(log_p[np.arange(n), labels].mean())
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, param: np.ndarray, **kwargs) -> "AdamState":
        return cls(np.zeros_like(param, dtype=np.float64), np.zeros_like(param, dtype=np.float64), **kwargs)


def adam_update(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float) -> np.ndarray:
    """One bias-corrected Adam step. ``state`` is advanced in place; the
    updated parameter array is returned."""
    if grad.shape != param.shape or state.m.shape != param.shape:
        raise ShapeError(f"param {param.shape}, grad {grad.shape}, state {state.m.shape} disagree")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return param - lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class Adam:
    """Adam over a dict of named parameter arrays."""

    lr: float
    states: dict[str, AdamState] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            st = self.states.get(name)
            if st is None:
                st = self.states[name] = AdamState.like(params[name])
            params[name] = adam_update(params[name], g, st, self.lr)


def fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
