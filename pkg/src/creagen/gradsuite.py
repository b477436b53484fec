"""Registered finite-difference checks over every op, layer, loss and network.

Each check builds a small float64 problem from a seed and hands it to
``grad_check``. Scalar outputs are formed as a fixed random projection
``sum(out * R)`` so that no gradient vanishes by symmetry (a plain sum of a
batch-normalized tensor has zero gradient, for instance).
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Iterable

import numpy as np

from .autograd import Tensor, batch_norm, conv2d, conv_transpose2d, grad_check
from .autograd import functional as F
from .divergence import can_creativity_loss, classification_loss, mce_creativity_loss, sm_creativity_loss, SMParams
from .nets import Discriminator, DCGANGenerator, NetworkSpec, StackGANStage2, StyleGANGenerator
from .nn import BatchNorm, Conv2d, ConvTranspose2d, Linear, ResidualBlock

DT = np.float64
CREATIVITY_TAGS = (
    ("can", None),
    ("mce", None),
    ("sm(0.5,0.5)", SMParams(0.5, 0.5)),
    ("sm(0.5,2)", SMParams(0.5, 2.0)),
    ("sm(2,0.5)", SMParams(2.0, 0.5)),
    ("sm(2,2)", SMParams(2.0, 2.0)),
    ("bhattacharyya", "bhattacharyya"),
    ("kl", "kl"),
    ("renyi(0.5)", "renyi(0.5)"),
    ("tsallis(2)", "tsallis(2)"),
)


def _t(rng, *shape, scale=1.0, offset=0.0):
    return Tensor((offset + scale * rng.standard_normal(shape)).astype(DT))


def _projector(shape, rng):
    r = Tensor(rng.standard_normal(shape))
    return lambda out: F.sum(F.mul(out, r))


def _check_scale(net, rng):
    """Redraw weight matrices and kernels at unit-order scale.

    With the N(0, 0.02) training init, a finite-difference step of 1e-5 is a
    relatively large move once batch norm rescales the layer, and ReLU kinks
    get crossed. Scale-appropriate weights keep the check local.
    """
    for name, p in net.named_parameters():
        if p.ndim >= 2:
            fan_in = p.size // p.shape[0]
            p.data = rng.standard_normal(p.shape) / np.sqrt(fan_in)
        elif name.endswith("gamma"):
            p.data = 1.0 + 0.2 * rng.standard_normal(p.shape)
        else:
            # move biases and betas off zero so no ReLU input sits exactly on its kink
            p.data = 0.5 * rng.standard_normal(p.shape)
    return net


def _away_from_zero(rng, *shape, gap=0.1):
    x = rng.standard_normal(shape)
    return Tensor((np.sign(x) * (np.abs(x) + gap)).astype(DT))


# -------------------------------------------------------------- elementwise
def _op_checks():
    def binary(fn, shape_b=None):
        def make(rng):
            a = _t(rng, 3, 4)
            b = _t(rng, *(shape_b or (3, 4)))
            p = _projector((3, 4), rng)
            return (lambda a, b: p(fn(a, b))), [a, b]

        return make

    def unary(fn, positive=False, kink=False, shape=(3, 5)):
        def make(rng):
            if positive:
                x = Tensor(rng.uniform(0.2, 2.0, shape).astype(DT))
            elif kink:
                x = _away_from_zero(rng, *shape)
            else:
                x = _t(rng, *shape)
            p = _projector(fn(Tensor(x.data)).shape, rng)
            return (lambda x: p(fn(x))), [x]

        return make

    def concat(rng):
        a, b = _t(rng, 2, 3, 2), _t(rng, 2, 1, 2)
        p = _projector((2, 4, 2), rng)
        return (lambda a, b: p(F.concat([a, b], axis=1))), [a, b]

    def matmul(rng):
        a, b = _t(rng, 2, 3), _t(rng, 3, 4)
        p = _projector((2, 4), rng)
        return (lambda a, b: p(F.matmul(a, b))), [a, b]

    def linear(rng):
        x, w, b = _t(rng, 4, 3), _t(rng, 5, 3), _t(rng, 5)
        p = _projector((4, 5), rng)
        return (lambda x, w, b: p(F.linear(x, w, b))), [x, w, b]

    return OrderedDict(
        [
            ("op.add", binary(F.add)),
            ("op.add_batch_broadcast", binary(F.add, (4,))),
            ("op.sub", binary(F.sub)),
            ("op.mul", binary(F.mul)),
            ("op.mul_batch_broadcast", binary(F.mul, (4,))),
            ("op.scale", unary(lambda x: F.scale(x, -1.7))),
            ("op.shift", unary(lambda x: F.shift(x, 0.3))),
            ("op.reshape", unary(lambda x: F.reshape(x, (5, 3)))),
            ("op.concat", concat),
            ("op.matmul", matmul),
            ("op.linear", linear),
            ("op.sum_axis", unary(lambda x: F.sum(x, axis=1))),
            ("op.mean_axis", unary(lambda x: F.mean(x, axis=0, keepdims=True))),
            ("op.absolute", unary(F.absolute, kink=True)),
            ("op.log", unary(F.log, positive=True)),
            ("op.exp", unary(F.exp)),
            ("op.relu", unary(F.relu, kink=True)),
            ("op.leaky_relu", unary(F.leaky_relu, kink=True)),
            ("op.tanh", unary(F.tanh)),
            ("op.sigmoid", unary(F.sigmoid)),
            ("op.log_sigmoid", unary(F.log_sigmoid)),
            ("op.softplus", unary(F.softplus)),
            ("op.log_softmax", unary(lambda x: F.log_softmax(x, axis=1))),
            ("op.softmax", unary(lambda x: F.softmax(x, axis=1))),
        ]
    )


# ------------------------------------------------------------ conv and norm
def _conv_checks():
    def conv(padding, stride=1, k=3):
        def make(rng):
            x, w, b = _t(rng, 2, 3, 6, 6), _t(rng, 4, 3, k, k), _t(rng, 4)
            out_shape = conv2d(Tensor(x.data), Tensor(w.data), Tensor(b.data), stride, padding).shape
            p = _projector(out_shape, rng)
            return (lambda x, w, b: p(conv2d(x, w, b, stride, padding))), [x, w, b]

        return make

    def convt(stride, padding, output_padding=0, k=3):
        def make(rng):
            x, w, b = _t(rng, 2, 3, 4, 4), _t(rng, 3, 2, k, k), _t(rng, 2)
            out_shape = conv_transpose2d(Tensor(x.data), Tensor(w.data), Tensor(b.data), stride, padding, output_padding).shape
            p = _projector(out_shape, rng)
            return (lambda x, w, b: p(conv_transpose2d(x, w, b, stride, padding, output_padding))), [x, w, b]

        return make

    def bn(training, ndim=4):
        def make(rng):
            shape = (4, 3, 3, 3) if ndim == 4 else (5, 3)
            x, g, b = _t(rng, *shape), _t(rng, 3, offset=1.0, scale=0.2), _t(rng, 3)
            rm, rv = rng.standard_normal(3), rng.uniform(0.5, 2.0, 3)
            p = _projector(shape, rng)

            def f(x, g, b):
                return p(batch_norm(x, g, b, rm.copy(), rv.copy(), training, update_stats=False))

            return f, [x, g, b]

        return make

    return OrderedDict(
        [
            ("conv2d.zero_pad", conv(1)),
            ("conv2d.stride2", conv(1, stride=2, k=4)),
            ("conv2d.reflect_pad", conv(("reflect", 3), k=7)),
            ("conv_transpose2d.k4s2p1", convt(2, 1, k=4)),
            ("conv_transpose2d.output_padding", convt(2, 1, output_padding=1)),
            ("conv_transpose2d.k5s1p2", convt(1, 2, k=5)),
            ("batch_norm.train_4d", bn(True)),
            ("batch_norm.train_2d", bn(True, ndim=2)),
            ("batch_norm.eval", bn(False)),
        ]
    )


# ------------------------------------------------------------------ layers
def _module_check(build: Callable, in_shape, adapter: Callable = None):
    adapt = adapter or (lambda out: out)

    def make(rng):
        net = _check_scale(build(rng), rng)
        x = _t(rng, *in_shape)
        out_shape = adapt(net(Tensor(x.data))).shape
        p = _projector(out_shape, rng)
        params = net.parameters()

        def f(x, *_):
            with net.frozen_stats():
                return p(adapt(net(x)))

        return f, [x] + params

    return make


def _layer_checks():
    return OrderedDict(
        [
            ("layer.linear", _module_check(lambda r: Linear(5, 4, r), (3, 5))),
            ("layer.conv2d", _module_check(lambda r: Conv2d(2, 3, 3, 1, 1, r, bias=True), (2, 2, 5, 5))),
            ("layer.conv_transpose2d", _module_check(lambda r: ConvTranspose2d(2, 3, 4, 2, 1, r, bias=True), (2, 2, 3, 3))),
            ("layer.batch_norm", _module_check(lambda r: BatchNorm(3, r), (4, 3, 2, 2))),
            ("layer.residual_block", _module_check(lambda r: ResidualBlock(2, 2, r), (3, 2, 4, 4))),
            ("layer.residual_block_projection", _module_check(lambda r: ResidualBlock(2, 3, r), (3, 2, 4, 4))),
        ]
    )


# ------------------------------------------------------------------ losses
def _loss_checks():
    def creativity(tag, params):
        def make(rng):
            logits = _t(rng, 4, 7)
            if tag == "can":
                return (lambda z: can_creativity_loss(z)), [logits]
            if tag == "mce":
                return (lambda z: mce_creativity_loss(z)), [logits]
            return (lambda z: sm_creativity_loss(z, params)), [logits]

        return make

    def classif(rng):
        logits = _t(rng, 5, 7)
        labels = rng.integers(0, 7, 5)
        return (lambda z: classification_loss(z, labels)), [logits]

    checks = OrderedDict((f"loss.{name}", creativity(name, params)) for name, params in CREATIVITY_TAGS)
    checks["loss.classification"] = classif
    return checks


# ---------------------------------------------------------------- networks
def _joined_heads(out) -> Tensor:
    rf = F.reshape(out.real_fake, (out.real_fake.shape[0], 1))
    return F.concat([rf, out.shape_logits, out.texture_logits], axis=1)


TINY = dict(width_scale=1 / 32, nz=6, dtype="float64")


def _network_checks():
    def dcgan(r):
        return DCGANGenerator(NetworkSpec("dcgan", size=16, **TINY), r)

    def disc(r):
        return Discriminator(NetworkSpec("discriminator", size=16, **TINY), r)

    def stage2(r):
        return StackGANStage2(NetworkSpec("stackgan2", size=32, **TINY), r)

    def style(rng):
        G = _check_scale(StyleGANGenerator(NetworkSpec("stylegan", size=32, **TINY), rng), rng)
        m = Tensor(np.where(rng.random((4, 1, 32, 32)) < 0.5, 1.0, -1.0))
        z = _t(rng, 4, TINY["nz"])
        p = _projector((4, 3, 32, 32), rng)

        def f(z, *_):
            with G.frozen_stats():
                return p(G(m, z))

        return f, [z] + G.parameters()

    def discriminator_heads(rng):
        D = _check_scale(disc(rng), rng)
        x = _t(rng, 3, 3, 16, 16)
        labels = rng.integers(0, 7, 3)

        def f(x, *_):
            with D.frozen_stats():
                out = D(x)
                return F.add(F.sum(F.softplus(out.real_fake)), F.add(classification_loss(out.shape_logits, labels), mce_creativity_loss(out.texture_logits)))

        return f, [x] + D.parameters()

    def reconstruction(rng):
        from .trainer import reconstruction_loss

        G = _check_scale(StyleGANGenerator(NetworkSpec("stylegan", size=32, **TINY), rng), rng)
        # +-0.5 keeps |G - m| away from zero where tanh saturates at exactly +-1
        m = Tensor(np.where(rng.random((4, 1, 32, 32)) < 0.5, 0.5, -0.5))
        return (lambda *_: reconstruction_loss(G, m, TINY["nz"])), G.parameters()

    return OrderedDict(
        [
            ("net.dcgan_generator", _module_check(dcgan, (2, TINY["nz"]))),
            ("net.discriminator", _module_check(disc, (3, 3, 16, 16), _joined_heads)),
            ("net.discriminator_losses", discriminator_heads),
            ("net.stackgan_stage2", _module_check(stage2, (3, 3, 8, 8))),
            ("net.stylegan_generator", style),
            ("net.stylegan_reconstruction", reconstruction),
        ]
    )


def registry() -> "OrderedDict[str, Callable]":
    checks = OrderedDict()
    for group in (_op_checks(), _conv_checks(), _layer_checks(), _loss_checks(), _network_checks()):
        checks.update(group)
    return checks


NETWORK_MAX_ENTRIES = 12
NETWORK_TOLERANCE = 1e-3


def run_check(name: str, seed: int, tolerance: float = 1e-4):
    make = registry()[name]
    rng = np.random.default_rng(np.random.SeedSequence([seed, sum(map(ord, name))]))
    fn, point = make(rng)
    network = name.startswith("net.")
    max_entries = NETWORK_MAX_ENTRIES if network else None
    if network:
        tolerance = max(tolerance, NETWORK_TOLERANCE)
    return grad_check(fn, point, tolerance=tolerance, max_entries=max_entries, seed=seed, kink_aware=network)


def run_suite(seeds: Iterable[int] = (0,), tolerance: float = 1e-4, names=None) -> list:
    """[(check name, seed, GradCheckReport)] over the registry."""
    out = []
    for name in names or registry():
        for seed in seeds:
            out.append((name, seed, run_check(name, seed, tolerance)))
    return out
