"""Minimal NCHW tensor layers with hand-written backward passes, plus Adam.

Tensors are plain ``numpy.ndarray`` objects. Every op keeps the dtype of its
input, so the network runs in float32 while gradient checks can run in
float64. Convolutions use the cross-correlation convention (no kernel flip).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with an op."""


@dataclass
class ConvParams:
    """Weights and bias of a 2-D convolution.

    For :func:`conv2d` the weights are ``[out_ch, in_ch, kh, kw]`` and the bias
    has ``out_ch`` entries. :func:`transposed_conv2d` reads the same array as
    ``[in_ch, out_ch, kh, kw]`` (it is the adjoint map), so its bias has
    ``weights.shape[1]`` entries.
    """

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError(f"weights must be 4-D, got shape {self.weights.shape}")
        if self.stride < 1 or self.padding < 0:
            raise ValueError(f"bad stride/padding: {self.stride}/{self.padding}")


@dataclass
class GradTensor:
    """A parameter array paired with its gradient accumulator."""

    value: np.ndarray
    grad: np.ndarray = None

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ShapeError(f"grad shape {self.grad.shape} != value shape {self.value.shape}")

    def zero_grad(self):
        self.grad[...] = 0


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def like(cls, value: np.ndarray, **kwargs) -> "AdamState":
        return cls(np.zeros_like(value), np.zeros_like(value), **kwargs)


def _check_4d(x: np.ndarray, name: str):
    if x.ndim != 4:
        raise ShapeError(f"{name} must be [N,C,H,W], got shape {x.shape}")


def _out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Strided view of shape [N, C, H', W', kh, kw] over the zero-padded input."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _scatter_windows(cols: np.ndarray, weights: np.ndarray, out_hw, stride: int, padding: int):
    """Adjoint of the window gather: spread ``cols`` [N,F,H',W'] back through ``weights``.

    Returns an array [N, C, H, W] with ``H, W = out_hw``.
    """
    n, _, hq, wq = cols.shape
    _, c, kh, kw = weights.shape
    h, w = out_hw
    hp, wp = h + 2 * padding, w + 2 * padding
    acc = np.zeros((n, c, hp, wp), dtype=np.result_type(cols, weights))
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(cols, weights[:, :, i, j], axes=([1], [0]))  # N,H',W',C
            acc[:, :, i:i + stride * hq:stride, j:j + stride * wq:stride] += contrib.transpose(0, 3, 1, 2)
    return acc[:, :, padding:padding + h, padding:padding + w]


def conv2d(x: np.ndarray, params: ConvParams) -> np.ndarray:
    """2-D cross-correlation of ``x`` [N,C,H,W] with ``params`` -> [N,F,H',W']."""
    _check_4d(x, "input")
    f, c, kh, kw = params.weights.shape
    if x.shape[1] != c:
        raise ShapeError(f"input has {x.shape[1]} channels, weights expect in_ch={c}")
    if params.bias.shape != (f,):
        raise ShapeError(f"bias shape {params.bias.shape} != (out_ch={f},)")
    h, w = x.shape[2:]
    if h + 2 * params.padding < kh or w + 2 * params.padding < kw:
        raise ShapeError(
            f"padded input {h + 2 * params.padding}x{w + 2 * params.padding} smaller than kernel {kh}x{kw}"
        )
    win = _windows(x, kh, kw, params.stride, params.padding)
    out = np.tensordot(win, params.weights, axes=([1, 4, 5], [1, 2, 3]))  # N,H',W',F
    out = out.transpose(0, 3, 1, 2) + params.bias[None, :, None, None]
    return np.ascontiguousarray(out, dtype=x.dtype)


def conv2d_backward(x: np.ndarray, params: ConvParams, upstream: np.ndarray):
    """Gradients of :func:`conv2d` w.r.t. input, weights and bias."""
    _check_4d(x, "input")
    f, c, kh, kw = params.weights.shape
    h, w = x.shape[2:]
    expected = (x.shape[0], f, _out_size(h, kh, params.stride, params.padding),
                _out_size(w, kw, params.stride, params.padding))
    if upstream.shape != expected:
        raise ShapeError(f"upstream grad shape {upstream.shape} != forward output shape {expected}")
    win = _windows(x, kh, kw, params.stride, params.padding)
    grad_w = np.tensordot(upstream, win, axes=([0, 2, 3], [0, 2, 3])).astype(params.weights.dtype)
    grad_b = upstream.sum(axis=(0, 2, 3)).astype(params.bias.dtype)
    grad_x = _scatter_windows(upstream, params.weights, (h, w), params.stride, params.padding)
    return grad_x.astype(x.dtype), grad_w, grad_b


def _tconv_out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + k


def transposed_conv2d(x: np.ndarray, params: ConvParams) -> np.ndarray:
    """Transposed convolution: the adjoint of :func:`conv2d` with the same weights.

    ``x`` is [N, F, H, W] with ``F = weights.shape[0]``; the output is
    [N, C, (H-1)*stride - 2*padding + kh, ...] with ``C = weights.shape[1]``.
    With a 2x2 kernel and stride 2 the spatial size exactly doubles.
    """
    _check_4d(x, "input")
    f, c, kh, kw = params.weights.shape
    if x.shape[1] != f:
        raise ShapeError(f"input has {x.shape[1]} channels, transposed weights expect {f}")
    if params.bias.shape != (c,):
        raise ShapeError(f"bias shape {params.bias.shape} != (out_ch={c},)")
    h, w = x.shape[2:]
    out_hw = (_tconv_out_size(h, kh, params.stride, params.padding),
              _tconv_out_size(w, kw, params.stride, params.padding))
    if min(out_hw) < 1:
        raise ShapeError(f"transposed conv output would be {out_hw}")
    out = _scatter_windows(x, params.weights, out_hw, params.stride, params.padding)
    out = out + params.bias[None, :, None, None]
    return np.ascontiguousarray(out, dtype=x.dtype)


def transposed_conv2d_backward(x: np.ndarray, params: ConvParams, upstream: np.ndarray):
    f, c, kh, kw = params.weights.shape
    h, w = x.shape[2:]
    expected = (x.shape[0], c, _tconv_out_size(h, kh, params.stride, params.padding),
                _tconv_out_size(w, kw, params.stride, params.padding))
    if upstream.shape != expected:
        raise ShapeError(f"upstream grad shape {upstream.shape} != forward output shape {expected}")
    no_bias = ConvParams(params.weights, np.zeros(f, dtype=params.weights.dtype),
                         params.stride, params.padding)
    # the transpose of the transpose is the plain convolution
    grad_x = conv2d(upstream.astype(x.dtype), no_bias)
    win = _windows(upstream, kh, kw, params.stride, params.padding)
    grad_w = np.tensordot(x, win, axes=([0, 2, 3], [0, 2, 3])).astype(params.weights.dtype)
    grad_b = upstream.sum(axis=(0, 2, 3)).astype(params.bias.dtype)
    return grad_x, grad_w, grad_b


def maxpool2x2(x: np.ndarray):
    """Non-overlapping 2x2 max pooling.

    Returns the pooled tensor and the per-window argmax (0..3, row-major inside
    the window). Ties go to the first position in row-major order.
    """
    _check_4d(x, "input")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2x2_backward(upstream: np.ndarray, indices: np.ndarray) -> np.ndarray:
    if upstream.shape != indices.shape:
        raise ShapeError(f"upstream grad shape {upstream.shape} != pooled shape {indices.shape}")
    n, c, hh, wh = upstream.shape
    blocks = np.zeros((n, c, hh, wh, 4), dtype=upstream.dtype)
    np.put_along_axis(blocks, indices[..., None], upstream[..., None], axis=-1)
    return blocks.reshape(n, c, hh, wh, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * hh, 2 * wh)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    return np.where(x > 0, upstream, 0).astype(upstream.dtype, copy=False)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(out: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Backward of sigmoid given its *output* (s * (1 - s) * upstream)."""
    return upstream * out * (1 - out)


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_4d(a, "a")
    _check_4d(b, "b")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"cannot concat {a.shape} and {b.shape}: batch/spatial dims differ")
    return np.concatenate([a, b], axis=1)


def concat_channels_backward(upstream: np.ndarray, a_channels: int):
    return upstream[:, :a_channels], upstream[:, a_channels:]


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error and its gradient w.r.t. ``pred``."""
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    grad = (2.0 / diff.size) * diff
    return loss, grad.astype(pred.dtype, copy=False)


def adam_step(param: GradTensor, state: AdamState, lr: float):
    """One bias-corrected Adam update. Returns new ``(param, state)``; inputs are untouched."""
    if state.first_moment.shape != param.value.shape or state.second_moment.shape != param.value.shape:
        raise ShapeError(f"Adam moments {state.first_moment.shape} do not match parameter {param.value.shape}")
    g = param.grad
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    value = param.value - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    dtype = param.value.dtype
    new_param = GradTensor(value.astype(dtype), param.grad.copy())
    new_state = AdamState(m.astype(dtype), v.astype(dtype), t,
                          state.beta1, state.beta2, state.epsilon)
    return new_param, new_state
