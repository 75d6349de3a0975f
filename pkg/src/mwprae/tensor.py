"""1D convolution kernels with analytic gradients.

Feature maps are numpy arrays of shape ``(channels, length)`` or, batched,
``(batch, channels, length)``. Every kernel accumulates in float64 regardless
of the storage dtype of its inputs and returns float64 arrays.

Weight layouts:

* ``conv1d_same``: ``(out_channels, in_channels, kernel_width)``
* ``conv1d_transpose_same``: ``(in_channels, out_channels, kernel_width)``,
  i.e. the weight of the strided convolution it is the adjoint of.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass
class ConvLayerParams:
    """Weights, bias and stride of one convolution or transposed convolution."""

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    transposed: bool = False

    def __post_init__(self):
        if self.weights.ndim != 3:
            raise ValueError(f"weights must be 3-D, got shape {self.weights.shape}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.bias.shape != (self.out_channels,):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match out_channels={self.out_channels}"
            )

    @property
    def kernel_width(self) -> int:
        return self.weights.shape[2]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[0] if self.transposed else self.weights.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[1] if self.transposed else self.weights.shape[0]


def same_padding(length: int, stride: int, kernel_width: int) -> tuple[int, int, int]:
    """Output length and (left, right) zero padding of a "SAME" strided conv."""
    out_len = -(-length // stride)
    total = max((out_len - 1) * stride + kernel_width - length, 0)
    left = total // 2
    return out_len, left, total - left


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ValueError(f"expected (channels, length) or (batch, channels, length), got {x.shape}")
    return x, False


def _unbatch(y: np.ndarray, squeeze: bool) -> np.ndarray:
    return y[0] if squeeze else y


def _im2col(xp: np.ndarray, kernel_width: int, stride: int, out_len: int) -> np.ndarray:
    """(B, C, Lp) padded input -> (B, C*K, out_len) column matrix."""
    b, c, _ = xp.shape
    win = sliding_window_view(xp, kernel_width, axis=-1)[:, :, : (out_len - 1) * stride + 1 : stride]
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(b, c * kernel_width, out_len)


def _col2im(cols: np.ndarray, channels: int, kernel_width: int, stride: int, padded_len: int) -> np.ndarray:
    """Adjoint of ``_im2col``: scatter-add (B, C*K, n) columns into (B, C, Lp)."""
    b, _, n = cols.shape
    cols = cols.reshape(b, channels, kernel_width, n)
    out = np.zeros((b, channels, padded_len))
    span = (n - 1) * stride + 1
    # fixed k order keeps the reduction deterministic
    for k in range(kernel_width):
        out[:, :, k : k + span : stride] += cols[:, :, k, :]
    return out


def _check_channels(x: np.ndarray, p: ConvLayerParams) -> None:
    if x.shape[1] != p.in_channels:
        raise ValueError(f"channel mismatch: input has {x.shape[1]} channels, layer expects {p.in_channels}")


def _flat_weights(p: ConvLayerParams) -> np.ndarray:
    w = np.asarray(p.weights, dtype=np.float64)
    return w.reshape(w.shape[0], -1)


def conv1d_same(x: np.ndarray, p: ConvLayerParams) -> np.ndarray:
    """Strided cross-correlation with "SAME" zero padding.

    ``y[co, t] = bias[co] + sum_{ci, k} w[co, ci, k] * x_padded[ci, t*stride + k]``
    with output length ``ceil(L / stride)`` and ``pad_left = floor(total / 2)``.
    """
    if p.transposed:
        raise ValueError("conv1d_same given transposed-layer params")
    x, squeeze = _batched(x)
    _check_channels(x, p)
    out_len, left, right = same_padding(x.shape[2], p.stride, p.kernel_width)
    xp = np.pad(x, ((0, 0), (0, 0), (left, right)))
    cols = _im2col(xp, p.kernel_width, p.stride, out_len)
    y = _flat_weights(p) @ cols
    y += np.asarray(p.bias, dtype=np.float64)[:, None]
    return _unbatch(y, squeeze)


def conv1d_same_grad(
    x: np.ndarray, p: ConvLayerParams, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of ``conv1d_same`` w.r.t. input, weights and bias.

    Weight and bias gradients are summed over the batch axis when ``x`` is batched.
    """
    x, squeeze = _batched(x)
    g, _ = _batched(upstream)
    _check_channels(x, p)
    out_len, left, right = same_padding(x.shape[2], p.stride, p.kernel_width)
    if g.shape != (x.shape[0], p.out_channels, out_len):
        raise ValueError(f"upstream shape {g.shape} inconsistent with forward output "
                         f"{(x.shape[0], p.out_channels, out_len)}")
    xp = np.pad(x, ((0, 0), (0, 0), (left, right)))
    cols = _im2col(xp, p.kernel_width, p.stride, out_len)
    w = _flat_weights(p)
    grad_w = _batch_outer(g, cols).reshape(p.weights.shape)
    grad_b = g.sum(axis=(0, 2))
    grad_xp = _col2im(w.T @ g, x.shape[1], p.kernel_width, p.stride, xp.shape[2])
    grad_x = grad_xp[:, :, left : left + x.shape[2]]
    return _unbatch(grad_x, squeeze), grad_w, grad_b


def conv1d_transpose_same(x: np.ndarray, p: ConvLayerParams) -> np.ndarray:
    """Transposed "SAME" convolution, output length ``L * stride``.

    Defined as the exact adjoint of ``conv1d_same`` (with the same weight
    tensor) mapping length ``L * stride`` to ``L``; the bias is added per
    output channel after the scatter.
    """
    if not p.transposed:
        raise ValueError("conv1d_transpose_same given non-transposed params")
    x, squeeze = _batched(x)
    _check_channels(x, p)
    out_len = x.shape[2] * p.stride
    _, left, right = same_padding(out_len, p.stride, p.kernel_width)
    cols = _flat_weights(p).T @ x
    yp = _col2im(cols, p.out_channels, p.kernel_width, p.stride, out_len + left + right)
    y = yp[:, :, left : left + out_len]
    y += np.asarray(p.bias, dtype=np.float64)[:, None]
    return _unbatch(np.ascontiguousarray(y), squeeze)


def conv1d_transpose_same_grad(
    x: np.ndarray, p: ConvLayerParams, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of ``conv1d_transpose_same`` w.r.t. input, weights and bias."""
    x, squeeze = _batched(x)
    g, _ = _batched(upstream)
    _check_channels(x, p)
    out_len = x.shape[2] * p.stride
    if g.shape != (x.shape[0], p.out_channels, out_len):
        raise ValueError(f"upstream shape {g.shape} inconsistent with forward output "
                         f"{(x.shape[0], p.out_channels, out_len)}")
    _, left, right = same_padding(out_len, p.stride, p.kernel_width)
    gp = np.pad(g, ((0, 0), (0, 0), (left, right)))
    cols = _im2col(gp, p.kernel_width, p.stride, x.shape[2])
    w = _flat_weights(p)
    grad_x = w @ cols
    grad_w = _batch_outer(x, cols).reshape(p.weights.shape)
    grad_b = g.sum(axis=(0, 2))
    return _unbatch(grad_x, squeeze), grad_w, grad_b


def _batch_outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum_b a[b] @ b[b].T for (B, M, N) and (B, P, N)."""
    m, p = a.shape[1], b.shape[1]
    return a.transpose(1, 0, 2).reshape(m, -1) @ b.transpose(1, 0, 2).reshape(p, -1).T


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Subgradient at 0 is taken as 0."""
    return np.where(x > 0, upstream, 0.0)


def tanh_act(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def tanh_grad(y: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Gradient given the tanh *output* ``y``."""
    return upstream * (1.0 - y * y)
