"""Differentiable elementwise, reduction, linear-algebra and activation ops."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor, make_op


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _broadcast_kind(a: Tensor, b: Tensor) -> str:
    """Classify how `b` lines up with `a`: 'same', 'a_batch', 'b_batch', 'a_scalar', 'b_scalar'."""
    if a.shape == b.shape:
        return "same"
    if b.ndim == 0:
        return "b_scalar"
    if a.ndim == 0:
        return "a_scalar"
    if a.ndim >= 1 and a.shape[1:] == b.shape:
        return "b_batch"
    if b.ndim >= 1 and b.shape[1:] == a.shape:
        return "a_batch"
    raise ValueError(f"shape mismatch: {a.shape} vs {b.shape} (only leading-batch broadcasting is allowed)")


def _reduce_to(g: np.ndarray, kind: str, which: str) -> np.ndarray:
    if kind == "same":
        return g
    if kind == f"{which}_scalar":
        return np.asarray(g.sum())
    if kind == f"{which}_batch":
        return g.sum(axis=0)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    kind = _broadcast_kind(a, b)

    def bw(g):
        return _reduce_to(g, kind, "a"), _reduce_to(g, kind, "b")

    return make_op(a.data + b.data, (a, b), bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    kind = _broadcast_kind(a, b)

    def bw(g):
        return _reduce_to(g, kind, "a"), _reduce_to(-g, kind, "b")

    return make_op(a.data - b.data, (a, b), bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    kind = _broadcast_kind(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return _reduce_to(g * bd, kind, "a"), _reduce_to(g * ad, kind, "b")

    return make_op(ad * bd, (a, b), bw, "mul")


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar."""
    return make_op(x.data * c, (x,), lambda g: (g * c,), "scale")


def shift(x: Tensor, c: float) -> Tensor:
    """Add a python scalar."""
    return make_op(x.data + c, (x,), lambda g: (g,), "shift")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ValueError(f"cannot reshape {x.shape} into {shape}") from None
    src = x.shape
    return make_op(out, (x,), lambda g: (g.reshape(src),), "reshape")


def flatten(x: Tensor) -> Tensor:
    """Collapse everything after the batch dimension."""
    return reshape(x, (x.shape[0], -1))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty sequence")
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or t.shape[:ax] + t.shape[ax + 1 :] != ref.shape[:ax] + ref.shape[ax + 1 :]:
            raise ValueError(f"shape mismatch in concat along axis {axis}: {ref.shape} vs {t.shape}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def bw(g):
        out = []
        for i in range(len(tensors)):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(idx)])
        return out

    return make_op(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw, "concat")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product (m, k) @ (k, n)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch in matmul: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return make_op(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Fully connected layer: ``x @ weight.T + bias`` with weight shaped (out, in)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"shape mismatch in linear: input {x.shape} vs weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"shape mismatch in linear: bias {bias.shape} vs weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data
        parents = (x, weight, bias)
    else:
        parents = (x, weight)

    def bw(g):
        grads = [g @ wd, g.T @ xd]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return make_op(out, parents, bw, "linear")


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    axes = _norm_axis(axis, x.ndim)
    src = x.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, src).copy(),)

    return make_op(np.sum(x.data, axis=axes, keepdims=keepdims), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    src = x.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, src).copy(),)

    return make_op(np.mean(x.data, axis=axes, keepdims=keepdims), (x,), bw, "mean")


def absolute(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return make_op(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ValueError("log of a non-positive value")
    d = x.data
    return make_op(np.log(d), (x,), lambda g: (g / d,), "log")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_op(out, (x,), lambda g: (g * out,), "exp")


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """Elementwise max(x, floor); gradient flows only where x exceeds the floor."""
    keep = x.data > floor
    return make_op(np.where(keep, x.data, floor).astype(x.dtype), (x,), lambda g: (g * keep,), "clamp_min")


# ---------------------------------------------------------------- activations
def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    return make_op(x.data * keep, (x,), lambda g: (g * keep,), "relu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return make_op(x.data * factor, (x,), lambda g: (g * factor,), "leaky_relu")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_op(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(d: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * d) + 1.0)


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return make_op(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log_sigmoid(x: Tensor) -> Tensor:
    """log(sigmoid(x)) computed as min(x, 0) - log1p(exp(-|x|))."""
    d = x.data
    out = np.minimum(d, 0.0) - np.log1p(np.exp(-np.abs(d)))
    return make_op(out, (x,), lambda g: (g * _sigmoid(-d),), "log_sigmoid")


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), stable for large |x|."""
    d = x.data
    out = np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d)))
    return make_op(out, (x,), lambda g: (g * _sigmoid(d),), "softplus")


def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _check_axis(x, axis)
    shifted = x.data - np.max(x.data, axis=ax, keepdims=True)
    out = shifted - np.log(np.sum(np.exp(shifted), axis=ax, keepdims=True))
    soft = np.exp(out)

    def bw(g):
        return (g - soft * np.sum(g, axis=ax, keepdims=True),)

    return make_op(out, (x,), bw, "log_softmax")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _check_axis(x, axis)
    shifted = x.data - np.max(x.data, axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=ax, keepdims=True)

    def bw(g):
        return (out * (g - np.sum(g * out, axis=ax, keepdims=True)),)

    return make_op(out, (x,), bw, "softmax")
