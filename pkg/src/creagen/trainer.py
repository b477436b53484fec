"""Adversarial training loops with classification, creativity and reconstruction terms.

All losses use sum reduction over the batch. With ``D(x) = sigmoid(l(x))``::

    L_D = lambda_Dr * [sum softplus(-l(x_real)) + sum softplus(l(x_fake))]
        + lambda_Db * sum over enabled branches of CE(branch(x_real), label)
    L_G = lambda_Gr * adversarial(l(x_fake)) + lambda_Ge * creativity(branch(x_fake))
        [+ lambda_rec * sum |G(m, z=0) - m|]        (stylegan only)

``adversarial`` is ``sum log(1 - D(G(z))) = -sum softplus(l)`` for
``g_loss="minimax"`` and ``sum softplus(-l)`` for ``g_loss="nonsaturating"``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import checkpoint as ckpt_io
from .autograd import Tensor, backward
from .autograd import functional as F
from .divergence import classification_loss, creativity_loss, validate_creativity
from .errors import TrainingDiverged, ValidationError
from .nets import NetworkSpec, build, images_to_tensor, masks_to_tensor, tensor_to_images
from .nn import Adam, Module, grad_norm

CREATIVITY_BRANCHES = ("shape", "texture", "shape_texture")
G_LOSSES = ("minimax", "nonsaturating")

# independent RNG streams derived from the master seed
_STREAM_G, _STREAM_D, _STREAM_DATA, _STREAM_NOISE = 1, 2, 3, 4


@dataclass
class TrainConfig:
    arch: str = "dcgan"
    size: int = 64
    lambda_Dr: float = 1.0
    lambda_Db: float = 1.0
    lambda_Gr: float = 1.0
    lambda_Ge: float = 0.0
    lambda_rec: float = 10.0
    creativity: str = "none"
    creativity_branch: str = "texture"
    branches: tuple = ("shape", "texture")
    g_loss: str = "minimax"
    lr: float = 0.002
    batch_size: int = 64
    iterations: int = 2000
    seed: int = 0
    nz: int = 100
    width_scale: float = 0.25
    dtype: str = "float64"
    checkpoint_every: int = 500
    keep_checkpoints: int = 4

    def __post_init__(self):
        self.branches = tuple(self.branches)
        self.validate()

    def validate(self) -> None:
        if self.arch not in ("dcgan", "stackgan2", "stylegan"):
            raise ValidationError(f"arch must be dcgan, stackgan2 or stylegan, got {self.arch!r}")
        for name in ("lambda_Dr", "lambda_Db", "lambda_Gr", "lambda_Ge", "lambda_rec"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
                raise ValidationError(f"{name} must be a finite number >= 0, got {value!r}")
        try:
            self.creativity = validate_creativity(str(self.creativity))
        except ValueError as err:
            raise ValidationError(f"creativity: {err}") from None
        if self.creativity_branch not in CREATIVITY_BRANCHES:
            raise ValidationError(f"creativity_branch must be one of {CREATIVITY_BRANCHES}, got {self.creativity_branch!r}")
        for b in self.branches:
            if b not in ("shape", "texture"):
                raise ValidationError(f"unknown discriminator branch {b!r}")
        if self.creativity != "none":
            for b in self.creativity_heads:
                if b not in self.branches:
                    raise ValidationError(f"creativity on the {b} branch needs that discriminator head enabled")
        if self.g_loss not in G_LOSSES:
            raise ValidationError(f"g_loss must be one of {G_LOSSES}, got {self.g_loss!r}")
        if not self.lr > 0:
            raise ValidationError(f"lr must be > 0, got {self.lr}")
        for name in ("batch_size", "iterations", "checkpoint_every", "keep_checkpoints"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < (2 if name == "batch_size" else 1):
                raise ValidationError(f"{name} must be a positive integer (batch_size >= 2), got {value!r}")
        if self.size not in (32, 64):
            raise ValidationError(f"size must be 32 or 64, got {self.size}")
        if self.dtype not in ("float32", "float64"):
            raise ValidationError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def creativity_heads(self) -> tuple:
        return ("shape", "texture") if self.creativity_branch == "shape_texture" else (self.creativity_branch,)

    def generator_spec(self) -> NetworkSpec:
        return NetworkSpec(self.arch, size=self.size, nz=self.nz, width_scale=self.width_scale, dtype=self.dtype)

    def discriminator_spec(self) -> NetworkSpec:
        return NetworkSpec(
            "discriminator", size=self.size, nz=self.nz, width_scale=self.width_scale, branches=self.branches, dtype=self.dtype
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["branches"] = list(self.branches)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"unknown config fields: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ValidationError(f"cannot read config {path}: {err}") from None
        if not isinstance(d, dict):
            raise ValidationError(f"config {path} must hold a JSON object")
        return cls.from_dict(d)


LOG_COLUMNS = (
    "iteration",
    "L_D",
    "L_D_real",
    "L_D_fake",
    "L_D_cls_shape",
    "L_D_cls_texture",
    "L_G",
    "L_G_adv",
    "L_G_creativity",
    "L_rec",
    "grad_norm_D",
    "grad_norm_G",
)


@dataclass
class TrainLog:
    """One record per iteration. Wall time is kept apart in `wall_times` so the CSV replays exactly."""

    rows: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)

    def append(self, row: dict, wall: Optional[float] = None) -> None:
        self.rows.append({c: row.get(c, 0.0) for c in LOG_COLUMNS})
        if wall is not None:
            self.wall_times.append(wall)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.rows:
            w.writerow([r["iteration"]] + [repr(float(r[c])) for c in LOG_COLUMNS[1:]])
        return buf.getvalue()

    def timing_csv(self) -> str:
        lines = ["iteration,wall_seconds"]
        lines += [f"{i + 1},{t:.6f}" for i, t in enumerate(self.wall_times)]
        return "\n".join(lines) + "\n"

    @classmethod
    def read_csv(cls, path) -> "TrainLog":
        log = cls()
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                log.rows.append({c: (int(rec[c]) if c == "iteration" else float(rec[c])) for c in LOG_COLUMNS})
        return log


class GANState:
    """Generator, discriminator and their optimizers for one run."""

    def __init__(self, config: TrainConfig, G: Module = None, D: Module = None):
        self.config = config
        seed = config.seed
        self.G = G if G is not None else build(config.generator_spec(), _stream_seed(seed, _STREAM_G))
        self.D = D if D is not None else build(config.discriminator_spec(), _stream_seed(seed, _STREAM_D))
        self.opt_G = Adam(self.G.parameters(), lr=config.lr)
        self.opt_D = Adam(self.D.parameters(), lr=config.lr)
        self.noise_rng = np.random.default_rng(np.random.SeedSequence([seed, _STREAM_NOISE]))
        self.dtype = np.dtype(config.dtype)

    def draw_z(self, n: int) -> Tensor:
        return Tensor(self.noise_rng.standard_normal((n, self.config.nz)).astype(self.dtype))

    def generate(self, z: Tensor, masks: Optional[Tensor] = None) -> Tensor:
        if self.config.arch == "stylegan":
            if masks is None:
                raise ValidationError("the stylegan generator needs masks")
            return self.G(masks, z)
        return self.G(z)


def _stream_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def _scalar(t: Tensor) -> float:
    return float(t.item())


def _add_terms(terms: list) -> Optional[Tensor]:
    total = None
    for t in terms:
        total = t if total is None else F.add(total, t)
    return total


def discriminator_step(
    state: GANState,
    batch_real: Tensor,
    batch_fake: Tensor,
    shape_labels=None,
    texture_labels=None,
) -> dict:
    """One update of the discriminator; the generator is not touched."""
    cfg = state.config
    if batch_real.shape != batch_fake.shape:
        raise ValidationError(f"real batch {batch_real.shape} and fake batch {batch_fake.shape} differ")
    labels = {"shape": shape_labels, "texture": texture_labels}
    if cfg.lambda_Db > 0:
        for b in cfg.branches:
            if labels[b] is None:
                raise ValidationError(f"lambda_Db > 0 but no {b} labels for the real batch")
    D = state.D
    D.requires_grad_(True)
    state.opt_D.zero_grad()
    out_real = D(batch_real)
    out_fake = D(batch_fake.detach())
    real_term = F.sum(F.softplus(F.scale(out_real.real_fake, -1.0)))
    fake_term = F.sum(F.softplus(out_fake.real_fake))
    terms = [F.scale(F.add(real_term, fake_term), cfg.lambda_Dr)]
    comps = {"L_D_real": _scalar(real_term), "L_D_fake": _scalar(fake_term)}
    if cfg.lambda_Db > 0:
        for b in cfg.branches:
            cls = classification_loss(out_real.branch(b), labels[b])
            comps[f"L_D_cls_{b}"] = _scalar(cls)
            terms.append(F.scale(cls, cfg.lambda_Db))
    loss = _add_terms(terms)
    comps["L_D"] = _scalar(loss)
    if math.isfinite(comps["L_D"]):
        backward(loss)
        comps["grad_norm_D"] = grad_norm(D.parameters())
        state.opt_D.step()
    return comps


def _creativity_term(cfg: TrainConfig, out) -> Optional[Tensor]:
    if cfg.creativity == "none" or cfg.lambda_Ge == 0:
        return None
    return _add_terms([creativity_loss(out.branch(b), cfg.creativity) for b in cfg.creativity_heads])


def _adversarial_term(cfg: TrainConfig, logits: Tensor) -> Tensor:
    if cfg.g_loss == "minimax":
        return F.scale(F.sum(F.softplus(logits)), -1.0)
    return F.sum(F.softplus(F.scale(logits, -1.0)))


def _generator_update(state: GANState, fake: Tensor, extra: Optional[Tensor] = None, extra_name: str = "L_rec") -> dict:
    cfg = state.config
    D = state.D
    D.requires_grad_(False)
    try:
        with D.frozen_stats():
            out = D(fake)
        adv = _adversarial_term(cfg, out.real_fake)
        terms = [F.scale(adv, cfg.lambda_Gr)]
        comps = {"L_G_adv": _scalar(adv)}
        crea = _creativity_term(cfg, out)
        if crea is not None:
            comps["L_G_creativity"] = _scalar(crea)
            terms.append(F.scale(crea, cfg.lambda_Ge))
        if extra is not None:
            comps[extra_name] = _scalar(extra)
            terms.append(F.scale(extra, cfg.lambda_rec))
        loss = _add_terms(terms)
        comps["L_G"] = _scalar(loss)
        state.opt_G.zero_grad()
        if math.isfinite(comps["L_G"]):
            backward(loss)
            comps["grad_norm_G"] = grad_norm(state.G.parameters())
            state.opt_G.step()
    finally:
        D.requires_grad_(True)
    return comps


def generator_step(state: GANState, batch_z: Tensor, fake: Optional[Tensor] = None) -> dict:
    """One update of the generator; pass `fake` to reuse the graph of ``G(batch_z)``."""
    cfg = state.config
    if cfg.creativity != "none" and cfg.lambda_Ge == 0:
        warnings.warn("creativity loss requested with lambda_Ge = 0; it has no effect", stacklevel=2)
    if fake is None:
        fake = state.generate(batch_z)
    return _generator_update(state, fake)


def reconstruction_loss(G: Module, masks: Tensor, nz: int) -> Tensor:
    """sum_p |G(m, z=0)_p - m_p| with the mask replicated over the 3 channels."""
    z0 = Tensor(np.zeros((masks.shape[0], nz), dtype=masks.dtype))
    with G.frozen_stats():
        out = G(masks, z0)
    target = Tensor(np.repeat(masks.data, 3, axis=1))
    return F.sum(F.absolute(F.sub(out, target)))


def stylegan_step(state: GANState, batch_masks: Tensor, batch_images: Tensor, batch_z: Tensor,
                  shape_labels=None, texture_labels=None) -> dict:
    """Discriminator then generator update for the mask-conditioned generator."""
    cfg = state.config
    if batch_masks is None:
        raise ValidationError("stylegan training needs masks")
    fake = state.G(batch_masks, batch_z)
    comps = discriminator_step(state, batch_images, fake, shape_labels, texture_labels)
    rec = reconstruction_loss(state.G, batch_masks, cfg.nz) if cfg.lambda_rec > 0 else None
    comps.update(_generator_update(state, fake, rec))
    return comps


class BatchFeeder:
    """Deterministic epoch-wise shuffling over the training split."""

    def __init__(self, dataset, config: TrainConfig):
        self.dataset = dataset
        self.idx = dataset.indices("train") if "train" in set(dataset.splits) else np.arange(len(dataset))
        if len(self.idx) < config.batch_size:
            raise ValidationError(f"training split has {len(self.idx)} items, fewer than batch_size {config.batch_size}")
        self.batch = config.batch_size
        self.rng = np.random.default_rng(np.random.SeedSequence([config.seed, _STREAM_DATA]))
        self.dtype = config.dtype
        self.order = self.rng.permutation(self.idx)
        self.pos = 0

    def next(self):
        if self.pos + self.batch > len(self.order):
            self.order = self.rng.permutation(self.idx)
            self.pos = 0
        sel = np.sort(self.order[self.pos : self.pos + self.batch])
        self.pos += self.batch
        ds = self.dataset
        images = images_to_tensor(ds.float_images(sel), self.dtype)
        masks = masks_to_tensor(ds.masks[sel], self.dtype) if ds.masks is not None else None
        return images, masks, ds.shape_labels[sel], ds.texture_labels[sel]


@dataclass
class TrainResult:
    state: GANState
    log: TrainLog
    checkpoints: list


def check_dataset(config: TrainConfig, dataset) -> None:
    if dataset.size != config.size:
        raise ValidationError(f"dataset images are {dataset.size}px but config.size is {config.size}")
    if config.lambda_Db > 0 and config.branches and not dataset.has_labels:
        raise ValidationError("lambda_Db > 0 needs shape and texture labels in the dataset")
    if config.arch == "stylegan" and not dataset.has_masks:
        raise ValidationError("stylegan training needs a dataset with masks")


def make_checkpoint(state: GANState, iteration: int) -> ckpt_io.Checkpoint:
    cfg = state.config
    specs = {"G": asdict(cfg.generator_spec()), "D": asdict(cfg.discriminator_spec())}
    for s in specs.values():
        s["branches"] = list(s["branches"])
    meta = {"config": cfg.to_dict(), "iteration": iteration}
    return ckpt_io.Checkpoint(specs, ckpt_io.pack_modules({"G": state.G, "D": state.D}), meta)


def train(config: TrainConfig, dataset, out_dir=None, progress=None, clock=None) -> TrainResult:
    """Alternate discriminator and generator updates 1:1 for `config.iterations` steps.

    Checkpoints go to ``out_dir/checkpoints`` every `checkpoint_every` iterations
    and at the end; only the newest `keep_checkpoints` are kept.
    """
    check_dataset(config, dataset)
    if config.creativity != "none" and config.lambda_Ge == 0:
        warnings.warn("creativity loss requested with lambda_Ge = 0; it has no effect", stacklevel=2)
    state = GANState(config)
    feeder = BatchFeeder(dataset, config)
    log = TrainLog()
    saved: list[Path] = []
    ckpt_dir = Path(out_dir) / "checkpoints" if out_dir is not None else None

    def save(it: int) -> None:
        if ckpt_dir is None:
            return
        path = ckpt_io.save(ckpt_dir / f"ckpt_{it:06d}.ckpt", make_checkpoint(state, it))
        if path not in saved:
            saved.append(path)
        while len(saved) > config.keep_checkpoints:
            saved.pop(0).unlink(missing_ok=True)

    for it in range(1, config.iterations + 1):
        start = clock() if clock else None
        images, masks, shapes, textures = feeder.next()
        z = state.draw_z(config.batch_size)
        if config.arch == "stylegan":
            comps = stylegan_step(state, masks, images, z, shapes, textures)
        else:
            fake = state.generate(z)
            comps = discriminator_step(state, images, fake, shapes, textures)
            comps.update(_generator_update(state, fake))
        comps["iteration"] = it
        log.append(comps, (clock() - start) if clock else None)
        bad = [k for k in ("L_D", "L_G") if not math.isfinite(comps[k])]
        if bad:
            raise TrainingDiverged(it, f"non-finite {', '.join(bad)}; last checkpoint: {saved[-1] if saved else 'none'}")
        if progress:
            progress(it, comps)
        if it % config.checkpoint_every == 0 or it == config.iterations:
            save(it)
    return TrainResult(state, log, list(saved))


def load_generator(path_or_ckpt, dtype: Optional[str] = None):
    """Rebuild the generator stored in a checkpoint; returns (G, TrainConfig)."""
    ck = path_or_ckpt if isinstance(path_or_ckpt, ckpt_io.Checkpoint) else ckpt_io.load(path_or_ckpt)
    cfg_dict = dict(ck.meta["config"])
    if dtype is not None:
        cfg_dict["dtype"] = dtype
    cfg = TrainConfig.from_dict(cfg_dict)
    G = build(cfg.generator_spec(), 0)
    G.load_state_dict(ck.group("G"))
    return G, cfg


def sample(
    checkpoint,
    n: int,
    seed: int,
    masks: Optional[np.ndarray] = None,
    zero_z: bool = False,
    chunk: Optional[int] = None,
    dtype: Optional[str] = None,
) -> np.ndarray:
    """Generate `n` images in [0, 1], shape (n, H, W, 3).

    Batch norm runs on batch statistics of fixed-size chunks (the training
    batch size by default), as during training; the last chunk is padded with
    extra draws so every image sees the same chunk size. For stylegan, `masks`
    holds exactly one boolean mask per image.
    """
    G, cfg = checkpoint if isinstance(checkpoint, tuple) else load_generator(checkpoint, dtype)
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    if cfg.arch == "stylegan":
        if masks is None:
            raise ValidationError("stylegan sampling needs masks")
        masks = np.asarray(masks, dtype=bool)
        if masks.shape != (n, cfg.size, cfg.size):
            raise ValidationError(f"masks must have shape ({n}, {cfg.size}, {cfg.size}), got {masks.shape}")
    chunk = chunk or cfg.batch_size
    rng = np.random.default_rng(np.random.SeedSequence([seed, _STREAM_NOISE]))
    dt = np.dtype(cfg.dtype)
    out = np.empty((n, cfg.size, cfg.size, 3), dtype=np.float64)
    G.train()
    with G.frozen_stats():
        for lo in range(0, n, chunk):
            hi = min(n, lo + chunk)
            z = rng.standard_normal((chunk, cfg.nz)).astype(dt)
            if zero_z:
                z[:] = 0.0
            if cfg.arch == "stylegan":
                m = np.zeros((chunk, cfg.size, cfg.size), dtype=bool)
                m[: hi - lo] = masks[lo:hi]
                m[hi - lo :] = masks[(np.arange(chunk - (hi - lo)) + lo) % n]
                x = G(masks_to_tensor(m, dt), Tensor(z))
            else:
                x = G(Tensor(z))
            out[lo:hi] = tensor_to_images(x.data[: hi - lo])
    return out
