"""Convolution, transposed convolution and batch normalization.

Layouts follow the usual NCHW convention. Convolution kernels are shaped
(out_channels, in_channels, k, k); transposed-convolution kernels are shaped
(in_channels, out_channels, k, k), so that ``conv_transpose2d`` with a kernel
``w`` is the exact adjoint of ``conv2d`` with the same ``w``.

Padding is an int (zero padding) or ``("reflect", p)``.
"""

from __future__ import annotations

from typing import Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, make_op

Padding = Union[int, tuple]


def parse_padding(padding: Padding) -> tuple[str, int]:
    if isinstance(padding, (int, np.integer)):
        if padding < 0:
            raise ValueError(f"negative padding {padding}")
        return "zeros", int(padding)
    if isinstance(padding, str) and padding.startswith("reflect(") and padding.endswith(")"):
        return "reflect", int(padding[len("reflect(") : -1])
    mode, amount = padding
    if mode not in ("zeros", "reflect"):
        raise ValueError(f"unknown padding mode {mode!r}")
    return mode, int(amount)


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def conv_transpose_output_size(size: int, kernel: int, stride: int, pad: int, output_padding: int = 0) -> int:
    return (size - 1) * stride - 2 * pad + kernel + output_padding


def _pad(x: np.ndarray, mode: str, p: int) -> np.ndarray:
    if p == 0:
        return x
    width = ((0, 0), (0, 0), (p, p), (p, p))
    if mode == "reflect":
        return np.pad(x, width, mode="reflect")
    return np.pad(x, width)


def _unpad_adjoint(g: np.ndarray, mode: str, p: int, h: int, w: int) -> np.ndarray:
    """Adjoint of `_pad`: fold the padded gradient back onto the original grid."""
    if p == 0:
        return g
    if mode == "zeros":
        return g[:, :, p : p + h, p : p + w]
    rows = np.pad(np.arange(h), p, mode="reflect")
    cols = np.pad(np.arange(w), p, mode="reflect")
    tmp = np.zeros(g.shape[:2] + (h, g.shape[3]), dtype=g.dtype)
    np.add.at(tmp, (slice(None), slice(None), rows), g)
    out = np.zeros(g.shape[:2] + (h, w), dtype=g.dtype)
    np.add.at(out, (slice(None), slice(None), slice(None), cols), tmp)
    return out


def _scatter_windows(cols: np.ndarray, out: np.ndarray, stride: int) -> None:
    """Add cols (N, C, k, k, Ho, Wo) into out (N, C, H, W) at strided window offsets."""
    k1, k2, ho, wo = cols.shape[2:]
    for i in range(k1):
        for j in range(k2):
            out[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += cols[:, :, i, j]


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: Padding = 0,
) -> Tensor:
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and kernel, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, ck, k1, k2 = weight.shape
    if ck != c:
        raise ValueError(f"shape mismatch in conv2d: input {x.shape} vs kernel {weight.shape}")
    mode, p = parse_padding(padding)
    if mode == "reflect" and (p >= h or p >= w):
        raise ValueError(f"reflect padding {p} too large for input {x.shape}")
    ho, wo = conv_output_size(h, k1, stride, p), conv_output_size(w, k2, stride, p)
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d output size would be non-positive for input {x.shape} and kernel {weight.shape}")
    xp = _pad(x.data, mode, p)
    win = sliding_window_view(xp, (k1, k2), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    wd = weight.data
    out = np.tensordot(win, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    parents = [x, weight]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
        parents.append(bias)
    out = np.ascontiguousarray(out)

    def bw(g):
        grads = [None, None]
        if x.requires_grad:
            cols = np.tensordot(g, wd, axes=([1], [0]))  # N, Ho, Wo, C, k, k
            cols = cols.transpose(0, 3, 4, 5, 1, 2)
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            _scatter_windows(cols, dxp, stride)
            grads[0] = _unpad_adjoint(dxp, mode, p, h, w)
        if weight.requires_grad:
            grads[1] = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_op(out, parents, bw, "conv2d")


def conv_transpose2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> Tensor:
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv_transpose2d expects 4-d input and kernel, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    ci, o, k1, k2 = weight.shape
    if ci != c:
        raise ValueError(f"shape mismatch in conv_transpose2d: input {x.shape} vs kernel {weight.shape}")
    mode, p = parse_padding(padding)
    if mode != "zeros":
        raise ValueError("conv_transpose2d supports zero padding only")
    if output_padding < 0 or (output_padding > 0 and output_padding >= stride):
        raise ValueError(f"output_padding {output_padding} must be smaller than stride {stride}")
    ho = conv_transpose_output_size(h, k1, stride, p, output_padding)
    wo = conv_transpose_output_size(w, k2, stride, p, output_padding)
    if ho <= 0 or wo <= 0:
        raise ValueError(
            f"conv_transpose2d output size would be non-positive for input {x.shape} and kernel {weight.shape}"
        )
    full_h = (h - 1) * stride + k1 + output_padding
    full_w = (w - 1) * stride + k2 + output_padding
    xd, wd = x.data, weight.data
    cols = np.tensordot(xd, wd, axes=([1], [0])).transpose(0, 3, 4, 5, 1, 2)  # N, O, k, k, H, W
    full = np.zeros((n, o, full_h, full_w), dtype=cols.dtype)
    _scatter_windows(cols, full, stride)
    out = full[:, :, p : p + ho, p : p + wo]
    parents = [x, weight]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
        parents.append(bias)
    out = np.ascontiguousarray(out)

    def bw(g):
        gfull = np.zeros((n, o, full_h, full_w), dtype=g.dtype)
        gfull[:, :, p : p + ho, p : p + wo] = g
        win = sliding_window_view(gfull, (k1, k2), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :h, :w]
        grads = [None, None]
        if x.requires_grad:
            grads[0] = np.ascontiguousarray(np.tensordot(win, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2))
        if weight.requires_grad:
            grads[1] = np.tensordot(xd, win, axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_op(out, parents, bw, "conv_transpose2d")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    update_stats: bool = True,
) -> Tensor:
    """Per-channel batch normalization for (N, C) or (N, C, H, W) input.

    In training mode the batch statistics normalize the input and, when
    `update_stats` is set, the running buffers are updated in place (biased
    variance for normalization, unbiased for the running estimate).
    """
    if x.ndim not in (2, 4):
        raise ValueError(f"batch_norm expects (N, C) or (N, C, H, W), got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"shape mismatch in batch_norm: input {x.shape} vs gamma {gamma.shape} / beta {beta.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, c) if x.ndim == 2 else (1, c, 1, 1)
    xd = x.data
    gd = gamma.data.reshape(bshape)
    if training:
        if x.shape[0] < 2:
            raise ValueError("batch_norm in train mode needs a batch of at least 2")
        m = int(np.prod([x.shape[a] for a in axes]))
        mu = xd.mean(axis=axes, keepdims=True)
        centered = xd - mu
        var = (centered * centered).mean(axis=axes, keepdims=True)
        invstd = 1.0 / np.sqrt(var + eps)
        xhat = centered * invstd
        if update_stats:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu.reshape(c)
            running_var *= 1.0 - momentum
            running_var += momentum * var.reshape(c) * (m / (m - 1))
    else:
        invstd = (1.0 / np.sqrt(running_var + eps)).reshape(bshape).astype(xd.dtype)
        xhat = (xd - running_mean.reshape(bshape).astype(xd.dtype)) * invstd
    out = gd * xhat + beta.data.reshape(bshape)

    def bw(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gd
        if training:
            dx = invstd * (
                dxhat - dxhat.mean(axis=axes, keepdims=True) - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)
            )
        else:
            dx = dxhat * invstd
        return dx, dgamma, dbeta

    return make_op(out, (x, gamma, beta), bw, "batch_norm")
