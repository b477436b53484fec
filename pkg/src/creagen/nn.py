"""Layer containers, parameter stores and the Adam optimizer."""

from __future__ import annotations

from collections import OrderedDict
from contextlib import contextmanager
from typing import Iterator, Optional, Sequence

import numpy as np

from .autograd import Tensor, batch_norm, conv2d, conv_transpose2d
from .autograd import functional as F
from .autograd.conv import conv_output_size, conv_transpose_output_size, parse_padding

INIT_STD = 0.02


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Base class: tracks parameters, buffers and child modules in definition order."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())
        object.__setattr__(self, "training", True)
        object.__setattr__(self, "update_stats", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def output_shape(self, in_shape: tuple) -> tuple:
        """Shape of the output for an input of `in_shape` (batch dim excluded)."""
        raise NotImplementedError(type(self).__name__)

    # ---------------------------------------------------------------- traversal
    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self._children.values():
            yield from child.modules()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict()
        for name, p in self.named_parameters():
            state[name] = p.data
        for name, b in self.named_buffers():
            state[name] = b
        return state

    def load_state_dict(self, state: dict) -> None:
        own = self.state_dict()
        missing = [k for k in own if k not in state]
        extra = [k for k in state if k not in own]
        if missing or extra:
            raise KeyError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, p in self.named_parameters():
            src = np.asarray(state[name])
            if src.shape != p.shape:
                raise ValueError(f"{name}: stored shape {src.shape} != parameter shape {p.shape}")
            p.data = src.astype(p.dtype).copy()
        for name, b in self.named_buffers():
            src = np.asarray(state[name])
            if src.shape != b.shape:
                raise ValueError(f"{name}: stored shape {src.shape} != buffer shape {b.shape}")
            b[...] = src

    # ------------------------------------------------------------------- modes
    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    @contextmanager
    def frozen_stats(self):
        """Run batch-norm layers in train mode without touching running statistics."""
        saved = [(m, m.update_stats) for m in self.modules()]
        for m, _ in saved:
            object.__setattr__(m, "update_stats", False)
        try:
            yield self
        finally:
            for m, flag in saved:
                object.__setattr__(m, "update_stats", flag)


def _normal(rng: np.random.Generator, shape, dtype, mean: float = 0.0) -> np.ndarray:
    return (mean + INIT_STD * rng.standard_normal(shape)).astype(dtype)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng, bias: bool = True, dtype=np.float64):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.weight = Parameter(_normal(rng, (out_features, in_features), dtype))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype)) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise ValueError(f"Linear expects ({self.in_features},), got {tuple(in_shape)}")
        return (self.out_features,)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, stride, padding, rng, bias: bool = False, dtype=np.float64):
        super().__init__()
        self.in_ch, self.out_ch, self.kernel, self.stride = in_ch, out_ch, kernel, stride
        self.padding = padding
        self.weight = Parameter(_normal(rng, (out_ch, in_ch, kernel, kernel), dtype))
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype)) if bias else None

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_ch:
            raise ValueError(f"Conv2d expects {self.in_ch} channels, got {c}")
        _, p = parse_padding(self.padding)
        ho = conv_output_size(h, self.kernel, self.stride, p)
        wo = conv_output_size(w, self.kernel, self.stride, p)
        if ho <= 0 or wo <= 0:
            raise ValueError(f"Conv2d output would be {ho}x{wo}")
        return (self.out_ch, ho, wo)


class ConvTranspose2d(Module):
    def __init__(
        self, in_ch, out_ch, kernel, stride, padding, rng, output_padding: int = 0, bias: bool = False, dtype=np.float64
    ):
        super().__init__()
        self.in_ch, self.out_ch, self.kernel, self.stride = in_ch, out_ch, kernel, stride
        self.padding, self.output_padding = padding, output_padding
        self.weight = Parameter(_normal(rng, (in_ch, out_ch, kernel, kernel), dtype))
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype)) if bias else None

    def forward(self, x):
        return conv_transpose2d(
            x, self.weight, self.bias, stride=self.stride, padding=self.padding, output_padding=self.output_padding
        )

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_ch:
            raise ValueError(f"ConvTranspose2d expects {self.in_ch} channels, got {c}")
        ho = conv_transpose_output_size(h, self.kernel, self.stride, self.padding, self.output_padding)
        wo = conv_transpose_output_size(w, self.kernel, self.stride, self.padding, self.output_padding)
        if ho <= 0 or wo <= 0:
            raise ValueError(f"ConvTranspose2d output would be {ho}x{wo}")
        return (self.out_ch, ho, wo)


class BatchNorm(Module):
    """Batch normalization over channels of (N, C) or (N, C, H, W) input."""

    def __init__(self, channels: int, rng, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float64):
        super().__init__()
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.gamma = Parameter(_normal(rng, (channels,), dtype, mean=1.0))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x):
        return batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
            update_stats=self.update_stats,
        )

    def output_shape(self, in_shape):
        if in_shape[0] != self.channels:
            raise ValueError(f"BatchNorm expects {self.channels} channels, got {in_shape[0]}")
        return tuple(in_shape)


class Activation(Module):
    def __init__(self, kind: str, slope: float = 0.2):
        super().__init__()
        if kind not in ("relu", "leaky_relu", "tanh", "sigmoid"):
            raise ValueError(f"unknown activation {kind!r}")
        self.kind, self.slope = kind, slope

    def forward(self, x):
        if self.kind == "relu":
            return F.relu(x)
        if self.kind == "leaky_relu":
            return F.leaky_relu(x, self.slope)
        if self.kind == "tanh":
            return F.tanh(x)
        return F.sigmoid(x)

    def output_shape(self, in_shape):
        return tuple(in_shape)


class Reshape(Module):
    def __init__(self, shape: Sequence[int]):
        super().__init__()
        self.shape = tuple(shape)

    def forward(self, x):
        return F.reshape(x, (x.shape[0],) + self.shape)

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != int(np.prod(self.shape)):
            raise ValueError(f"cannot reshape {tuple(in_shape)} into {self.shape}")
        return self.shape


class Flatten(Module):
    def forward(self, x):
        return F.flatten(x)

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = list(layers)
        for i, layer in enumerate(layers):
            self._children[str(i)] = layer

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def output_shape(self, in_shape):
        shape = tuple(in_shape)
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ValueError as err:
                raise ValueError(f"layer {i} ({type(layer).__name__}): {err}") from None
        return shape

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, i):
        return self.layers[i]


class ResidualBlock(Module):
    """conv3-BN-ReLU-conv3-BN plus a skip path (1x1 projection when widths differ); no activation after the sum."""

    def __init__(self, in_ch: int, out_ch: int, rng, dtype=np.float64):
        super().__init__()
        self.body = Sequential(
            Conv2d(in_ch, out_ch, 3, 1, 1, rng, dtype=dtype),
            BatchNorm(out_ch, rng, dtype=dtype),
            Activation("relu"),
            Conv2d(out_ch, out_ch, 3, 1, 1, rng, dtype=dtype),
            BatchNorm(out_ch, rng, dtype=dtype),
        )
        self.skip = Conv2d(in_ch, out_ch, 1, 1, 0, rng, dtype=dtype) if in_ch != out_ch else None

    def forward(self, x):
        skip = x if self.skip is None else self.skip(x)
        return F.add(skip, self.body(x))

    def output_shape(self, in_shape):
        return self.body.output_shape(in_shape)


class Adam:
    """Adam over an explicit parameter list; parameters without a gradient are skipped."""

    def __init__(self, params: Sequence[Parameter], lr: float = 0.002, betas=(0.5, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = (p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def grad_norm(params: Sequence[Parameter]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def as_input(x: np.ndarray, dtype: Optional[np.dtype] = None) -> Tensor:
    return Tensor(x if dtype is None else np.asarray(x, dtype=dtype))
