"""Generator and discriminator builders at desk scale.

Channel widths come from the reference tables (DCGAN base width 64, the
two-stage and mask-conditioned generator tables) multiplied by
``NetworkSpec.width_scale`` (default 1/4).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .autograd import Tensor
from .autograd import functional as F
from .nn import (
    Activation,
    BatchNorm,
    Conv2d,
    ConvTranspose2d,
    Flatten,
    Linear,
    Module,
    Reshape,
    ResidualBlock,
    Sequential,
)

ARCHITECTURES = ("dcgan", "stackgan2", "stylegan", "discriminator", "classifier")
BRANCHES = ("shape", "texture")
CANVAS_SIZES = (32, 64)


@dataclass
class NetworkSpec:
    arch: str
    size: int = 64
    nz: int = 100
    width_scale: float = 0.25
    branches: tuple = BRANCHES
    n_shapes: int = 7
    n_textures: int = 7
    feature_dim: int = 128
    dtype: str = "float64"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}")
        self.branches = tuple(self.branches)
        for b in self.branches:
            if b not in BRANCHES:
                raise ValueError(f"unknown discriminator branch {b!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def width(self, reference: int) -> int:
        return max(1, int(round(reference * self.width_scale)))

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        d["branches"] = tuple(d.get("branches", BRANCHES))
        return cls(**d)


class DiscriminatorOutput(NamedTuple):
    real_fake: Tensor  # (N,)
    shape_logits: Optional[Tensor]  # (N, 7)
    texture_logits: Optional[Tensor]

    def branch(self, name: str) -> Tensor:
        out = self.shape_logits if name == "shape" else self.texture_logits
        if out is None:
            raise ValueError(f"discriminator has no {name} branch")
        return out


def _log2_int(x: int, what: str) -> int:
    n = int(round(math.log2(x))) if x > 0 else -1
    if n < 0 or 2**n != x:
        raise ValueError(f"{what} must be a power of two, got {x}")
    return n


def _check_chain(net: Module, in_shape: tuple, expected: tuple, what: str) -> None:
    try:
        got = net.output_shape(in_shape)
    except ValueError as err:
        raise ValueError(f"{what}: inconsistent layer chain at {err}") from None
    if tuple(got) != tuple(expected):
        raise ValueError(f"{what}: layer chain produces {got}, expected {expected}")


# ------------------------------------------------------------------- DCGAN
class DCGANGenerator(Module):
    """z -> fully-connected projection to 4x4 -> (convT, BN, ReLU)* -> convT -> tanh."""

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator, size: Optional[int] = None):
        super().__init__()
        self.spec = spec
        size = size or spec.size
        dt = spec.np_dtype
        n_up = _log2_int(size // 4, "generator size / 4")
        if size < 8:
            raise ValueError(f"generator size must be >= 8, got {size}")
        ngf = spec.width(64)
        ch = ngf * 2 ** (n_up - 1)
        layers = [
            Linear(spec.nz, ch * 16, rng, bias=False, dtype=dt),
            Reshape((ch, 4, 4)),
            BatchNorm(ch, rng, dtype=dt),
            Activation("relu"),
        ]
        for _ in range(n_up - 1):
            layers += [
                ConvTranspose2d(ch, ch // 2, 4, 2, 1, rng, dtype=dt),
                BatchNorm(ch // 2, rng, dtype=dt),
                Activation("relu"),
            ]
            ch //= 2
        layers += [ConvTranspose2d(ch, 3, 4, 2, 1, rng, bias=True, dtype=dt), Activation("tanh")]
        self.net = Sequential(*layers)
        self.out_size = size
        _check_chain(self.net, (spec.nz,), (3, size, size), "dcgan generator")

    def forward(self, z: Tensor) -> Tensor:
        return self.net(z)

    def output_shape(self, in_shape):
        return self.net.output_shape(in_shape)


class Discriminator(Module):
    """conv / BN / leaky-ReLU(0.2) trunk down to 4x4, then one linear head per output."""

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        dt = spec.np_dtype
        n_down = _log2_int(spec.size // 4, "discriminator size / 4")
        ndf = spec.width(64)
        layers = [Conv2d(3, ndf, 4, 2, 1, rng, dtype=dt), Activation("leaky_relu")]
        ch = ndf
        for _ in range(n_down - 1):
            layers += [Conv2d(ch, ch * 2, 4, 2, 1, rng, dtype=dt), BatchNorm(ch * 2, rng, dtype=dt), Activation("leaky_relu")]
            ch *= 2
        layers.append(Flatten())
        self.trunk = Sequential(*layers)
        feat = ch * 16
        _check_chain(self.trunk, (3, spec.size, spec.size), (feat,), "discriminator trunk")
        self.real_fake = Linear(feat, 1, rng, dtype=dt)
        self.shape_head = Linear(feat, spec.n_shapes, rng, dtype=dt) if "shape" in spec.branches else None
        self.texture_head = Linear(feat, spec.n_textures, rng, dtype=dt) if "texture" in spec.branches else None

    def forward(self, x: Tensor) -> DiscriminatorOutput:
        h = self.trunk(x)
        rf = F.reshape(self.real_fake(h), (x.shape[0],))
        sh = self.shape_head(h) if self.shape_head is not None else None
        tx = self.texture_head(h) if self.texture_head is not None else None
        return DiscriminatorOutput(rf, sh, tx)


# --------------------------------------------------------------- StackGAN
class StackGANStage2(Module):
    """Residual upsampling generator: low-res image -> image 4x larger."""

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator, in_size: Optional[int] = None):
        super().__init__()
        dt = spec.np_dtype
        out_size = spec.size
        in_size = in_size or out_size // 4
        if in_size * 4 != out_size:
            raise ValueError(f"stage-2 input size {in_size} x 4 must equal output size {out_size}")
        if in_size % 4:
            raise ValueError(f"stage-2 input size {in_size} must be divisible by 4")
        w = spec.width
        c64, c128, c256 = w(64), w(128), w(256)
        layers = [
            Conv2d(3, c64, 7, 1, ("reflect", 3), rng, dtype=dt),
            BatchNorm(c64, rng, dtype=dt),
            Activation("relu"),
            Conv2d(c64, c128, 3, 2, 1, rng, dtype=dt),
            BatchNorm(c128, rng, dtype=dt),
            Activation("relu"),
            Conv2d(c128, c128, 3, 2, 1, rng, dtype=dt),
            BatchNorm(c128, rng, dtype=dt),
            Activation("relu"),
        ]
        ch = c128
        for _ in range(4):
            layers.append(ResidualBlock(ch, c256, rng, dtype=dt))
            ch = c256
        for out_ch in (c256, c256, c128, c64):
            layers += [
                ConvTranspose2d(ch, out_ch, 3, 2, 1, rng, output_padding=1, dtype=dt),
                BatchNorm(out_ch, rng, dtype=dt),
                Activation("relu"),
            ]
            ch = out_ch
        layers += [Conv2d(ch, 3, 7, 1, ("reflect", 3), rng, bias=True, dtype=dt), Activation("tanh")]
        self.net = Sequential(*layers)
        self.in_size = in_size
        _check_chain(self.net, (3, in_size, in_size), (3, out_size, out_size), "stackgan stage 2")

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)

    def output_shape(self, in_shape):
        return self.net.output_shape(in_shape)


class StackGANGenerator(Module):
    """DCGAN stage 1 at a quarter of the canvas followed by the residual stage 2."""

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        self.stage1 = DCGANGenerator(spec, rng, size=spec.size // 4)
        self.stage2 = StackGANStage2(spec, rng)

    def forward(self, z: Tensor) -> Tensor:
        return self.stage2(self.stage1(z))


# --------------------------------------------------------------- StyleGAN
class StyleGANGenerator(Module):
    """Mask + style-noise generator.

    The mask branch downsamples a {-1, +1} mask (see `masks_to_tensor`) with three stride-2 convs; the
    style branch projects z with a linear layer and upsamples with three
    transposed convs. Both meet at 1/8 of the canvas, are concatenated along
    channels, pass a conv stack and are upsampled back to the canvas.
    """

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        dt = spec.np_dtype
        size = spec.size
        w = spec.width
        meet = size // 8
        if meet < 2 or meet * 8 != size:
            raise ValueError(f"stylegan canvas must be a multiple of 8 and >= 16, got {size}")
        m64, m128, m256 = w(64), w(128), w(256)
        self.mask_branch = Sequential(
            Conv2d(1, m64, 5, 2, 2, rng, dtype=dt),
            BatchNorm(m64, rng, dtype=dt),
            Activation("leaky_relu"),
            Conv2d(m64, m128, 5, 2, 2, rng, dtype=dt),
            BatchNorm(m128, rng, dtype=dt),
            Activation("leaky_relu"),
            Conv2d(m128, m256, 5, 2, 2, rng, dtype=dt),
            BatchNorm(m256, rng, dtype=dt),
            Activation("leaky_relu"),
        )
        # style: fc to a (s64, base, base) map, then three convT reaching `meet`
        s64 = w(64)
        n_up = min(3, _log2_int(meet, "canvas / 8"))
        base = meet // 2**n_up
        style = [
            Linear(spec.nz, s64 * base * base, rng, bias=False, dtype=dt),
            Reshape((s64, base, base)),
            BatchNorm(s64, rng, dtype=dt),
            Activation("relu"),
        ]
        for i in range(3):
            if i < n_up:
                style.append(ConvTranspose2d(s64, s64, 4, 2, 1, rng, dtype=dt))
            else:
                style.append(ConvTranspose2d(s64, s64, 3, 1, 1, rng, dtype=dt))
            style += [BatchNorm(s64, rng, dtype=dt), Activation("relu")]
        self.style_branch = Sequential(*style)
        self.concat_channels = m256 + s64
        c256, c512, c128 = w(256), w(512), w(128)
        self.decoder = Sequential(
            Conv2d(self.concat_channels, c256, 3, 1, 1, rng, dtype=dt),
            BatchNorm(c256, rng, dtype=dt),
            Activation("leaky_relu"),
            Conv2d(c256, c512, 3, 2, 1, rng, dtype=dt),
            BatchNorm(c512, rng, dtype=dt),
            Activation("leaky_relu"),
            Conv2d(c512, c512, 3, 1, 1, rng, dtype=dt),
            BatchNorm(c512, rng, dtype=dt),
            Activation("leaky_relu"),
            ConvTranspose2d(c512, c256, 4, 2, 1, rng, dtype=dt),
            BatchNorm(c256, rng, dtype=dt),
            Activation("relu"),
            ConvTranspose2d(c256, c128, 4, 2, 1, rng, dtype=dt),
            BatchNorm(c128, rng, dtype=dt),
            Activation("relu"),
            ConvTranspose2d(c128, c128, 4, 2, 1, rng, dtype=dt),
            BatchNorm(c128, rng, dtype=dt),
            Activation("relu"),
            ConvTranspose2d(c128, w(64), 4, 2, 1, rng, dtype=dt),
            BatchNorm(w(64), rng, dtype=dt),
            Activation("relu"),
            ConvTranspose2d(w(64), 3, 5, 1, 2, rng, bias=True, dtype=dt),
            Activation("tanh"),
        )
        mask_out = self.mask_branch.output_shape((1, size, size))
        style_out = self.style_branch.output_shape((spec.nz,))
        if mask_out[1:] != style_out[1:]:
            raise ValueError(f"branch outputs differ at concat: mask {mask_out} vs style {style_out}")
        _check_chain(self.decoder, (self.concat_channels, meet, meet), (3, size, size), "stylegan decoder")

    def forward(self, mask: Tensor, z: Tensor) -> Tensor:
        if mask.ndim != 4 or mask.shape[1:] != (1, self.spec.size, self.spec.size):
            raise ValueError(f"mask must be (N, 1, {self.spec.size}, {self.spec.size}), got {mask.shape}")
        if z.shape != (mask.shape[0], self.spec.nz):
            raise ValueError(f"z must be ({mask.shape[0]}, {self.spec.nz}), got {z.shape}")
        joined = F.concat([self.mask_branch(mask), self.style_branch(z)], axis=1)
        return self.decoder(joined)

    def concat_features(self, mask: Tensor, z: Tensor) -> Tensor:
        return F.concat([self.mask_branch(mask), self.style_branch(z)], axis=1)


# -------------------------------------------------------------- classifier
class Classifier(Module):
    """Two-head CNN used by the evaluation metrics; ``features`` is the penultimate layer."""

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        dt = spec.np_dtype
        n_down = _log2_int(spec.size // 4, "classifier size / 4")
        c = spec.width(64)
        layers = [Conv2d(3, c, 3, 1, 1, rng, dtype=dt), BatchNorm(c, rng, dtype=dt), Activation("leaky_relu")]
        for _ in range(n_down):
            layers += [Conv2d(c, c * 2, 4, 2, 1, rng, dtype=dt), BatchNorm(c * 2, rng, dtype=dt), Activation("leaky_relu")]
            c *= 2
        layers += [Flatten(), Linear(c * 16, spec.feature_dim, rng, dtype=dt), Activation("relu")]
        self.trunk = Sequential(*layers)
        _check_chain(self.trunk, (3, spec.size, spec.size), (spec.feature_dim,), "classifier trunk")
        self.shape_head = Linear(spec.feature_dim, spec.n_shapes, rng, dtype=dt)
        self.texture_head = Linear(spec.feature_dim, spec.n_textures, rng, dtype=dt)

    def forward(self, x: Tensor):
        feats = self.trunk(x)
        return feats, self.shape_head(feats), self.texture_head(feats)


def build(spec: NetworkSpec, seed: int) -> Module:
    """Build any architecture from its spec with weights drawn from normal(0, 0.02)."""
    rng = np.random.default_rng(seed)
    if spec.arch == "dcgan":
        if spec.size not in CANVAS_SIZES:
            raise ValueError(f"dcgan canvas must be one of {CANVAS_SIZES}, got {spec.size}")
        return DCGANGenerator(spec, rng)
    if spec.arch == "stackgan2":
        return StackGANGenerator(spec, rng)
    if spec.arch == "stylegan":
        return StyleGANGenerator(spec, rng)
    if spec.arch == "discriminator":
        return Discriminator(spec, rng)
    return Classifier(spec, rng)


def build_dcgan_generator(spec: NetworkSpec, seed: int = 0) -> DCGANGenerator:
    return build(NetworkSpec.from_dict({**asdict(spec), "arch": "dcgan"}), seed)


def build_discriminator(spec: NetworkSpec, seed: int = 0) -> Discriminator:
    return build(NetworkSpec.from_dict({**asdict(spec), "arch": "discriminator"}), seed)


def build_stackgan_stage2(spec: NetworkSpec, seed: int = 0) -> StackGANStage2:
    return StackGANStage2(spec, np.random.default_rng(seed))


def build_stackgan_generator(spec: NetworkSpec, seed: int = 0) -> StackGANGenerator:
    return build(NetworkSpec.from_dict({**asdict(spec), "arch": "stackgan2"}), seed)


def build_stylegan_generator(spec: NetworkSpec, seed: int = 0) -> StyleGANGenerator:
    return build(NetworkSpec.from_dict({**asdict(spec), "arch": "stylegan"}), seed)


def images_to_tensor(images: np.ndarray, dtype="float64") -> Tensor:
    """(N, H, W, 3) images in [0, 1] -> (N, 3, H, W) tensor in [-1, 1]."""
    x = np.asarray(images, dtype=np.float64).transpose(0, 3, 1, 2) * 2.0 - 1.0
    return Tensor(np.ascontiguousarray(x, dtype=dtype))


def masks_to_tensor(masks: np.ndarray, dtype="float64") -> Tensor:
    """(N, H, W) bool masks -> (N, 1, H, W) tensor, -1 on the silhouette and +1 elsewhere.

    The polarity draws the mask like a garment on the dataset's white
    background, so the z = 0 reconstruction target lies near real images.
    """
    m = np.where(np.asarray(masks, dtype=bool), -1.0, 1.0)[:, None]
    return Tensor(np.ascontiguousarray(m, dtype=dtype))


def tensor_to_images(x: np.ndarray) -> np.ndarray:
    """(N, 3, H, W) in [-1, 1] -> (N, H, W, 3) in [0, 1], clipped."""
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    return (x.transpose(0, 2, 3, 1) + 1.0) / 2.0
