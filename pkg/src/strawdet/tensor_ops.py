"""Rank-4 float32 kernels (n, c, h, w) that every network block reduces to.

Tensors are plain C-contiguous ``numpy.float32`` arrays.  Kernels never modify
their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

DTYPE = np.float32


def as_tensor(x) -> np.ndarray:
    """Validate/convert ``x`` to a rank-4 contiguous float32 array."""
    t = np.ascontiguousarray(x, dtype=DTYPE)
    if t.ndim != 4:
        raise ShapeError(f"expected rank-4 tensor (n, c, h, w), got shape {t.shape}", dim="rank")
    return t


@dataclass(frozen=True)
class ConvParams:
    weight: np.ndarray  # (out, in, k, k)
    bias: np.ndarray  # (out,)
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        w = np.ascontiguousarray(self.weight, dtype=DTYPE)
        b = np.ascontiguousarray(self.bias, dtype=DTYPE)
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ShapeError(f"conv weight must be (out, in, k, k), got {w.shape}", dim="kernel")
        if b.shape != (w.shape[0],):
            raise ShapeError(f"conv bias must be ({w.shape[0]},), got {b.shape}", dim="out_channels")
        if self.stride < 1 or self.padding < 0:
            raise ShapeError(f"invalid stride={self.stride} padding={self.padding}", dim="stride")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]


@dataclass(frozen=True)
class BnParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-3

    def __post_init__(self):
        c = np.shape(self.gamma)
        for name in ("beta", "running_mean", "running_var"):
            if np.shape(getattr(self, name)) != c:
                raise ShapeError(f"batchnorm {name} has shape {np.shape(getattr(self, name))}, expected {c}", dim="channels")
        if np.any(np.asarray(self.running_var) < 0):
            raise ValueError("running_var must be non-negative")

    @property
    def channels(self) -> int:
        return len(self.gamma)


def _out_size(size: int, k: int, s: int, p: int, dim: str) -> int:
    out = (size + 2 * p - k) // s + 1
    if size + 2 * p < k or out < 1:
        raise ShapeError(f"window {k} larger than padded {dim} {size + 2 * p}", dim=dim)
    return out


def conv2d(x, params: ConvParams) -> np.ndarray:
    """2-D cross-correlation via im2col and one GEMM per batch."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if c != params.in_channels:
        raise ShapeError(f"conv expects {params.in_channels} input channels, got {c}", dim="channels")
    k, s, p = params.kernel_size, params.stride, params.padding
    oh = _out_size(h, k, s, p, "height")
    ow = _out_size(w, k, s, p, "width")
    wmat = params.weight.reshape(params.out_channels, c * k * k)

    if k == 1 and p == 0:
        cols = x[:, :, ::s, ::s].reshape(n, c, oh * ow)
    else:
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :oh, :ow]
        # (n, c, oh, ow, k, k) -> (n, c, k, k, oh, ow) so rows line up with the weight layout
        cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, oh * ow)
    out = np.matmul(wmat, cols)
    out += params.bias[None, :, None]
    return np.ascontiguousarray(out.reshape(n, params.out_channels, oh, ow), dtype=DTYPE)


def maxpool2d(x, k: int, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Max pooling; padded cells are -inf and never win for finite inputs."""
    x = as_tensor(x)
    if k < 1 or stride < 1 or padding < 0:
        raise ShapeError(f"invalid pool k={k} stride={stride} padding={padding}", dim="kernel")
    _, _, h, w = x.shape
    oh = _out_size(h, k, stride, padding, "height")
    ow = _out_size(w, k, stride, padding, "width")
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf)
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    return np.ascontiguousarray(win.max(axis=(4, 5)))


def sigmoid(x):
    x = np.asarray(x)
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.result_type(x, DTYPE))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x) -> np.ndarray:
    x = np.asarray(x)
    return x * sigmoid(x)


def fold_batchnorm(conv: ConvParams, bn: BnParams) -> ConvParams:
    """Absorb an inference-mode batchnorm into the preceding convolution.

    bn(y) = gamma * (y - mean) / sqrt(var + eps) + beta, so the folded conv uses
    weight * scale and (bias - mean) * scale + beta with scale = gamma / sqrt(var + eps).
    """
    if bn.channels != conv.out_channels:
        raise ShapeError(
            f"batchnorm has {bn.channels} channels, conv has {conv.out_channels} outputs", dim="channels"
        )
    scale = np.asarray(bn.gamma, np.float64) / np.sqrt(np.asarray(bn.running_var, np.float64) + bn.eps)
    weight = conv.weight.astype(np.float64) * scale[:, None, None, None]
    bias = (conv.bias.astype(np.float64) - np.asarray(bn.running_mean, np.float64)) * scale + np.asarray(bn.beta, np.float64)
    return ConvParams(weight.astype(DTYPE), bias.astype(DTYPE), conv.stride, conv.padding)


def upsample_nearest2x(x) -> np.ndarray:
    x = as_tensor(x)
    return np.ascontiguousarray(x.repeat(2, axis=2).repeat(2, axis=3))


def concat_channels(parts) -> np.ndarray:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat of zero tensors", dim="channels")
    n, _, h, w = parts[0].shape
    for i, p in enumerate(parts[1:], 1):
        if (p.shape[0], p.shape[2], p.shape[3]) != (n, h, w):
            dim = "batch" if p.shape[0] != n else "height" if p.shape[2] != h else "width"
            raise ShapeError(f"concat part {i} has shape {p.shape}, expected (n={n}, *, {h}, {w})", dim=dim)
    return np.concatenate(parts, axis=1)


def add(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch {a.shape} vs {b.shape}", dim="shape")
    return a + b
