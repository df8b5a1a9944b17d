"""Minimal NHWC conv/relu/pool/linear layers with analytic backprop.

Forward passes cache what backward needs; backward returns the input
gradient and stores parameter gradients on the layer. Arithmetic stays in
the layer dtype (float32 for training, float64 for gradient checks).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(1.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2D:
    """3x3 same-padding convolution, stride 1, NHWC."""

    def __init__(self, in_channels: int, out_channels: int,
                 rng: np.random.Generator, dtype=np.float32, kernel: int = 3):
        self.kernel = kernel
        self.in_channels = in_channels
        self.out_channels = out_channels
        fan_in = kernel * kernel * in_channels
        self.weight = _uniform_init(rng, (kernel, kernel, in_channels, out_channels), fan_in, dtype)
        self.bias = np.zeros(out_channels, dtype=dtype)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._cols = None
        self._input_hw = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        k = self.kernel
        pad = k // 2
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        windows = sliding_window_view(xp, (k, k), axis=(1, 2))  # (B,H,W,C,k,k)
        cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3))
        batch, height, width = cols.shape[:3]
        cols = cols.reshape(batch, height, width, k * k * self.in_channels)
        self._cols = cols
        self._input_hw = (x.shape[1], x.shape[2])
        w_mat = self.weight.reshape(-1, self.out_channels)
        return cols @ w_mat + self.bias

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        k = self.kernel
        pad = k // 2
        cols = self._cols
        batch, height, width = grad_out.shape[:3]
        flat_cols = cols.reshape(-1, cols.shape[-1])
        flat_grad = grad_out.reshape(-1, self.out_channels)
        self.grad_weight = (flat_cols.T @ flat_grad).reshape(self.weight.shape)
        self.grad_bias = flat_grad.sum(axis=0)
        w_mat = self.weight.reshape(-1, self.out_channels)
        grad_cols = (flat_grad @ w_mat.T).reshape(
            batch, height, width, k, k, self.in_channels
        )
        in_h, in_w = self._input_hw
        grad_xp = np.zeros(
            (batch, in_h + 2 * pad, in_w + 2 * pad, self.in_channels),
            dtype=grad_out.dtype,
        )
        for kh in range(k):
            for kw in range(k):
                grad_xp[:, kh : kh + height, kw : kw + width, :] += grad_cols[:, :, :, kh, kw, :]
        return grad_xp[:, pad : pad + in_h, pad : pad + in_w, :]


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out * self._mask


class MaxPool2x2:
    """2x2 max pooling, stride 2; ties break toward the first window cell."""

    def __init__(self):
        self._mask = None
        self._input_shape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        batch, height, width, channels = x.shape
        if height % 2 or width % 2:
            raise ValueError(f"pooling needs even spatial dims, got {height}x{width}")
        tiled = x.reshape(batch, height // 2, 2, width // 2, 2, channels)
        flat = tiled.transpose(0, 1, 3, 2, 4, 5).reshape(
            batch, height // 2, width // 2, 4, channels
        )
        winner = flat.argmax(axis=3)
        mask = np.zeros_like(flat, dtype=bool)
        np.put_along_axis(mask, winner[:, :, :, np.newaxis, :], True, axis=3)
        self._mask = mask
        self._input_shape = x.shape
        return flat.max(axis=3)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        batch, height, width, channels = self._input_shape
        spread = self._mask * grad_out[:, :, :, np.newaxis, :]
        tiled = spread.reshape(batch, height // 2, width // 2, 2, 2, channels)
        return tiled.transpose(0, 1, 3, 2, 4, 5).reshape(batch, height, width, channels)


class Linear:
    """Dense map; the classification head runs with bias disabled."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 dtype=np.float32, bias: bool = True):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = _uniform_init(rng, (in_dim, out_dim), in_dim, dtype)
        self.bias = np.zeros(out_dim, dtype=dtype) if bias else None
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = None if self.bias is None else np.zeros_like(self.bias)
        self._input = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._input = x
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        self.grad_weight = self._input.T @ grad_out
        if self.bias is not None:
            self.grad_bias = grad_out.sum(axis=0)
        return grad_out @ self.weight.T
