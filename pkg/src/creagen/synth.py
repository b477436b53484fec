"""Procedural shape x texture garment dataset with exact masks.

Seven silhouette families are crossed with seven texture programs. Every item
is rendered on a white canvas without anti-aliasing, so the binary mask is
exactly the set of non-white pixels. Texture colours are kept away from
white for the same reason.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ValidationError

SHAPE_NAMES = ("dress", "coat", "jacket", "top", "pullover", "t-shirt", "shirt")
TEXTURE_NAMES = ("uniform", "tiled", "striped", "animal skin", "dotted", "print", "graphical")
N_SHAPES = len(SHAPE_NAMES)
N_TEXTURES = len(TEXTURE_NAMES)
N_CELLS = N_SHAPES * N_TEXTURES
RTW_ITEM_COUNT = 4157
SIZES = (32, 64)

SCALE_RANGE = (0.9, 1.1)
SHIFT_FRACTION = 0.05
MAX_LOSS_FRACTION = 0.05
JITTER_RETRIES = 25

_COLOR_LO, _COLOR_HI = 12, 225


class DatasetError(ValidationError):
    """A dataset directory is missing files or holds inconsistent rows."""


@dataclass
class LabeledItem:
    image: np.ndarray  # H x W x 3, float64 in [0, 1]
    shape_label: int
    texture_label: int
    mask: Optional[np.ndarray]  # H x W bool

    @property
    def size(self) -> int:
        return self.image.shape[0]


# --------------------------------------------------------------- silhouettes
def _silhouette(shape_class: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask for one silhouette family, evaluated at pixel centres."""
    v, u = (np.mgrid[0:size, 0:size] + 0.5) / size
    wig = lambda: 1.0 + rng.uniform(-0.08, 0.08)  # noqa: E731
    cx = 0.5 + rng.uniform(-0.03, 0.03)
    if shape_class == 6:
        # two overlapping offset panels
        hw = 0.15 * wig()
        left = (v >= 0.08 * wig()) & (v <= 0.68 * wig()) & (u >= cx - 2 * hw) & (u <= cx + 0.02)
        right = (v >= 0.32 * wig()) & (v <= 0.92) & (u >= cx - 0.02) & (u <= cx + 2 * hw)
        return left | right
    tops = {0: 0.10, 1: 0.08, 2: 0.10, 3: 0.30, 4: 0.10, 5: 0.12}
    bottoms = {0: 0.92, 1: 0.92, 2: 0.86, 3: 0.64, 4: 0.90, 5: 0.88}
    top = tops[shape_class] * wig()
    bottom = min(0.95, bottoms[shape_class] * (1.0 + rng.uniform(-0.03, 0.03)))
    t = np.clip((v - top) / (bottom - top), 0.0, 1.0)
    k = wig()
    if shape_class == 0:
        hw = (0.09 + 0.25 * t) * k
    elif shape_class == 1:
        hw = np.full_like(t, 0.19 * k)
    elif shape_class == 2:
        hw = (0.34 - 0.22 * t) * k
    elif shape_class == 3:
        hw = np.full_like(t, 0.37 * k)
    elif shape_class == 4:
        hw = (0.13 + 0.24 * np.abs(2 * t - 1)) * k
    else:
        hw = np.where(t < 0.25, 0.41, 0.15) * k
    return (v >= top) & (v <= bottom) & (np.abs(u - cx) <= hw)


# ------------------------------------------------------------------ textures
def _color(rng: np.random.Generator) -> np.ndarray:
    return rng.integers(_COLOR_LO, _COLOR_HI + 1, size=3)


def _contrasting(rng: np.random.Generator, base: np.ndarray, min_gap: float = 90.0) -> np.ndarray:
    for _ in range(100):
        c = _color(rng)
        if np.abs(c.astype(float) - base).sum() >= min_gap * 1.5 and abs(_luma(c) - _luma(base)) >= min_gap / 2:
            return c
    return np.where(base > 120, _COLOR_LO, _COLOR_HI)


def _luma(c: np.ndarray) -> float:
    return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]


def _texture(texture_class: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Full-canvas uint8 texture (H, W, 3) for one texture program."""
    y, x = np.mgrid[0:size, 0:size].astype(float)
    c1 = _color(rng)
    c2 = _contrasting(rng, c1)
    unit = size / 32.0
    if texture_class == 0:
        sel = np.zeros((size, size), dtype=bool)
    elif texture_class == 1:
        cell = max(2, int(round(4 * unit * (1 + rng.uniform(-0.1, 0.1)))))
        ox, oy = rng.integers(0, cell, size=2)
        sel = (((x + ox) // cell + (y + oy) // cell) % 2).astype(bool)
    elif texture_class == 2:
        period = max(4, int(round(6 * unit * (1 + rng.uniform(-0.1, 0.1)))))
        coord = x if rng.random() < 0.5 else y
        sel = ((coord + rng.integers(0, period)) % period) < period / 2
    elif texture_class == 3:
        coarse = rng.standard_normal((max(4, size // 5), max(4, size // 5)))
        field_ = ndimage.zoom(coarse, size / coarse.shape[0], order=3)[:size, :size]
        sel = field_ > np.quantile(field_, 0.55)
    elif texture_class == 4:
        spacing = 6.0 * unit * (1 + rng.uniform(-0.08, 0.08))
        radius = 1.6 * unit
        ox, oy = rng.uniform(0, spacing, size=2)
        row = np.floor((y + oy) / spacing)
        xs = x + ox + (row % 2) * spacing / 2
        dx = (xs % spacing) - spacing / 2
        dy = ((y + oy) % spacing) - spacing / 2
        sel = dx * dx + dy * dy <= radius * radius
    elif texture_class == 5:
        block = max(1, int(round(unit * 2)))
        palette = np.stack([c1, c2, _contrasting(rng, c2), _contrasting(rng, c1)])
        grid = rng.integers(0, 4, size=(size // block + 1, size // block + 1))
        idx = np.kron(grid, np.ones((block, block), dtype=int))[:size, :size]
        return palette[idx].astype(np.uint8)
    else:
        # one large diamond outline centred on the canvas
        cx, cy = size / 2 + rng.uniform(-1, 1) * unit, size / 2 + rng.uniform(-1, 1) * unit
        d = np.abs(x + 0.5 - cx) + np.abs(y + 0.5 - cy)
        r = 8.0 * unit * (1 + rng.uniform(-0.1, 0.1))
        sel = (np.abs(d - r) <= 1.6 * unit) | (d <= 1.6 * unit)
    out = np.where(sel[..., None], c2, c1)
    return out.astype(np.uint8)


def _check_classes(shape_class: int, texture_class: int) -> None:
    if not 0 <= shape_class < N_SHAPES:
        raise ValueError(f"shape class {shape_class} out of range [0, {N_SHAPES})")
    if not 0 <= texture_class < N_TEXTURES:
        raise ValueError(f"texture class {texture_class} out of range [0, {N_TEXTURES})")


def render_item_u8(shape_class: int, texture_class: int, style_seed: int, size: int = 64):
    """Render to (uint8 image, bool mask)."""
    _check_classes(shape_class, texture_class)
    if size not in SIZES:
        raise ValueError(f"size must be one of {SIZES}, got {size}")
    rng = np.random.default_rng(np.random.SeedSequence([int(style_seed), shape_class, texture_class]))
    mask = _silhouette(shape_class, size, rng)
    tex = _texture(texture_class, size, rng)
    img = np.full((size, size, 3), 255, dtype=np.uint8)
    img[mask] = tex[mask]
    return img, mask


def render_item(shape_class: int, texture_class: int, style_seed: int, size: int = 64) -> LabeledItem:
    img, mask = render_item_u8(shape_class, texture_class, style_seed, size)
    return LabeledItem(img / 255.0, shape_class, texture_class, mask)


# -------------------------------------------------------------------- jitter
def _affine_u8(img: np.ndarray, mask: np.ndarray, scale: float, dx: float, dy: float):
    size = img.shape[0]
    c = size / 2.0
    coords = np.arange(size) + 0.5
    src_x = np.floor((coords - c - dx) / scale + c).astype(int)
    src_y = np.floor((coords - c - dy) / scale + c).astype(int)
    valid_x = (src_x >= 0) & (src_x < size)
    valid_y = (src_y >= 0) & (src_y < size)
    sx, sy = np.clip(src_x, 0, size - 1), np.clip(src_y, 0, size - 1)
    valid = valid_y[:, None] & valid_x[None, :]
    new_mask = mask[np.ix_(sy, sx)] & valid
    new_img = np.full_like(img, 255)
    new_img[new_mask] = img[np.ix_(sy, sx)][new_mask]
    return new_img, new_mask


def _lost_fraction(mask: np.ndarray, scale: float, dx: float, dy: float) -> float:
    size = mask.shape[0]
    c = size / 2.0
    ys, xs = np.nonzero(mask)
    fx = (xs + 0.5 - c) * scale + c + dx
    fy = (ys + 0.5 - c) * scale + c + dy
    inside = (fx >= 0) & (fx < size) & (fy >= 0) & (fy < size)
    return 1.0 - inside.mean() if len(xs) else 0.0


def apply_jitter(item: LabeledItem, scale: float, dx: float, dy: float) -> LabeledItem:
    """Scale about the canvas centre then shift by (dx, dy) pixels; nearest-neighbour sampling."""
    img = np.round(item.image * 255).astype(np.uint8)
    new_img, new_mask = _affine_u8(img, item.mask, scale, dx, dy)
    return LabeledItem(new_img / 255.0, item.shape_label, item.texture_label, new_mask)


def _draw_jitter(rng: np.random.Generator, size: int) -> tuple[float, float, float]:
    scale = rng.uniform(*SCALE_RANGE)
    dx, dy = rng.uniform(-SHIFT_FRACTION, SHIFT_FRACTION, size=2) * size
    return float(scale), float(dx), float(dy)


def jitter(item: LabeledItem, seed: int) -> LabeledItem:
    """Random scale in [0.9, 1.1] and shift up to 5% of the canvas, redrawn if >5% of the silhouette leaves the frame."""
    rng = np.random.default_rng(seed)
    for _ in range(JITTER_RETRIES):
        scale, dx, dy = _draw_jitter(rng, item.size)
        if _lost_fraction(item.mask, scale, dx, dy) <= MAX_LOSS_FRACTION:
            return apply_jitter(item, scale, dx, dy)
    raise ValueError(f"no jitter within {JITTER_RETRIES} draws keeps the silhouette in frame")


# ------------------------------------------------------------------- dataset
@dataclass
class LabeledDataset:
    """Images stored as uint8 arrays; `items` yields `LabeledItem` views."""

    images: np.ndarray  # N, H, W, 3 uint8
    shape_labels: np.ndarray
    texture_labels: np.ndarray
    masks: Optional[np.ndarray]  # N, H, W bool, None for external data without masks
    splits: np.ndarray  # 'train' / 'val'
    base_ids: np.ndarray
    seed: Optional[int] = None
    shape_names: tuple = SHAPE_NAMES
    texture_names: tuple = TEXTURE_NAMES
    notes: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)

    @property
    def size(self) -> int:
        return self.images.shape[1]

    @property
    def has_masks(self) -> bool:
        return self.masks is not None

    @property
    def has_labels(self) -> bool:
        return bool(np.all(self.shape_labels >= 0) and np.all(self.texture_labels >= 0))

    def __getitem__(self, i: int) -> LabeledItem:
        mask = None if self.masks is None else self.masks[i]
        return LabeledItem(self.images[i] / 255.0, int(self.shape_labels[i]), int(self.texture_labels[i]), mask)

    @property
    def items(self) -> Iterator[LabeledItem]:
        return (self[i] for i in range(len(self)))

    def float_images(self, idx=None) -> np.ndarray:
        imgs = self.images if idx is None else self.images[idx]
        return imgs.astype(np.float64) / 255.0

    def indices(self, split: str) -> np.ndarray:
        return np.nonzero(self.splits == split)[0]

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(
            self.images[idx],
            self.shape_labels[idx],
            self.texture_labels[idx],
            None if self.masks is None else self.masks[idx],
            self.splits[idx],
            self.base_ids[idx],
            self.seed,
            self.shape_names,
            self.texture_names,
            list(self.notes),
        )

    def cell_counts(self) -> np.ndarray:
        counts = np.zeros((N_SHAPES, N_TEXTURES), dtype=int)
        np.add.at(counts, (self.shape_labels, self.texture_labels), 1)
        return counts


def cell_of(index: int) -> tuple[int, int]:
    """Base item index -> (shape, texture); consecutive indices sweep the 7x7 grid."""
    cell = index % N_CELLS
    return cell // N_TEXTURES, cell % N_TEXTURES


def generate_dataset(
    n_items: int = RTW_ITEM_COUNT,
    size: int = 64,
    augment_factor: int = 5,
    seed: int = 0,
    val_every: int = 10,
) -> LabeledDataset:
    """Balanced synthetic dataset.

    Base item ``i`` sits in grid cell ``i % 49``; each base item yields
    ``augment_factor`` entries (itself plus jittered copies) tagged with its id
    in ``base_ids``. Every ``val_every``-th pass over the grid goes to the
    validation split, so splits are balanced too and never leak augmentations.
    """
    if n_items < N_CELLS:
        raise ValueError(f"n_items must be at least {N_CELLS} (one per class cell), got {n_items}")
    if augment_factor < 1:
        raise ValueError("augment_factor must be >= 1")
    total = n_items * augment_factor
    images = np.empty((total, size, size, 3), dtype=np.uint8)
    masks = np.empty((total, size, size), dtype=bool)
    shapes = np.empty(total, dtype=np.int64)
    textures = np.empty(total, dtype=np.int64)
    base_ids = np.empty(total, dtype=np.int64)
    splits = np.empty(total, dtype=object)
    row = 0
    for i in range(n_items):
        s, t = cell_of(i)
        style_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        img, mask = render_item_u8(s, t, style_seed, size)
        split = "val" if val_every and (i // N_CELLS) % val_every == val_every - 1 else "train"
        for a in range(augment_factor):
            if a > 0:
                item = jitter(LabeledItem(img / 255.0, s, t, mask), int(np.random.SeedSequence([seed, i, a]).generate_state(1)[0]))
                images[row] = np.round(item.image * 255).astype(np.uint8)
                masks[row] = item.mask
            else:
                images[row], masks[row] = img, mask
            shapes[row], textures[row], base_ids[row], splits[row] = s, t, i, split
            row += 1
    return LabeledDataset(images, shapes, textures, masks, splits.astype(str), base_ids, seed)


# ------------------------------------------------------------------ disk I/O
INDEX_COLUMNS = ("id", "shape_label", "texture_label", "split", "base_id")


def save_dataset(dataset: LabeledDataset, path) -> Path:
    path = Path(path)
    (path / "images").mkdir(parents=True, exist_ok=True)
    if dataset.has_masks:
        (path / "masks").mkdir(parents=True, exist_ok=True)
    with open(path / "index.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(INDEX_COLUMNS)
        for i in range(len(dataset)):
            writer.writerow(
                [i, int(dataset.shape_labels[i]), int(dataset.texture_labels[i]), dataset.splits[i], int(dataset.base_ids[i])]
            )
            Image.fromarray(dataset.images[i], mode="RGB").save(path / "images" / f"{i:06d}.png")
            if dataset.has_masks:
                Image.fromarray(dataset.masks[i].astype(np.uint8) * 255, mode="L").save(path / "masks" / f"{i:06d}.png")
    meta = {
        "seed": dataset.seed,
        "size": dataset.size,
        "count": len(dataset),
        "shape_names": list(dataset.shape_names),
        "texture_names": list(dataset.texture_names),
    }
    with open(path / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _read_png(path: Path, mode: str) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert(mode))


def load_dataset(path) -> LabeledDataset:
    """Load a dataset directory (index.csv + images/ [+ masks/])."""
    path = Path(path)
    index = path / "index.csv"
    if not index.is_file():
        raise DatasetError(f"{index}: index.csv not found")
    with open(index, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header[: len(INDEX_COLUMNS)]) != INDEX_COLUMNS:
            raise DatasetError(f"{index}: header must be {','.join(INDEX_COLUMNS)}")
        rows = list(reader)
    has_masks = (path / "masks").is_dir()
    images, masks, shapes, textures, splits, base_ids = [], [], [], [], [], []
    size = None
    for lineno, row in enumerate(rows, start=2):
        try:
            item_id, s, t, split, base = int(row[0]), int(row[1]), int(row[2]), row[3], int(row[4])
        except (ValueError, IndexError):
            raise DatasetError(f"{index}: row {lineno}: malformed row {row!r}") from None
        if not 0 <= s < N_SHAPES or not 0 <= t < N_TEXTURES:
            raise DatasetError(f"{index}: row {lineno}: label out of range (shape {s}, texture {t})")
        img_path = path / "images" / f"{item_id:06d}.png"
        if not img_path.is_file():
            raise DatasetError(f"{index}: row {lineno}: image for id {item_id} missing ({img_path.name})")
        img = _read_png(img_path, "RGB")
        if size is None:
            size = img.shape[0]
        if img.shape != (size, size, 3):
            raise DatasetError(f"{index}: row {lineno}: image {img_path.name} has shape {img.shape}, expected {(size, size, 3)}")
        if has_masks:
            mask_path = path / "masks" / f"{item_id:06d}.png"
            if not mask_path.is_file():
                raise DatasetError(f"{index}: row {lineno}: mask for id {item_id} missing ({mask_path.name})")
            m = _read_png(mask_path, "L")
            if m.shape != img.shape[:2]:
                raise DatasetError(f"{index}: row {lineno}: mask {mask_path.name} has shape {m.shape}, image is {img.shape[:2]}")
            masks.append(m > 127)
        images.append(img)
        shapes.append(s)
        textures.append(t)
        splits.append(split)
        base_ids.append(base)
    if not images:
        raise DatasetError(f"{index}: no rows")
    seed = None
    meta_path = path / "meta.json"
    if meta_path.is_file():
        with open(meta_path, encoding="utf-8") as fh:
            seed = json.load(fh).get("seed")
    ds = LabeledDataset(
        np.stack(images),
        np.asarray(shapes, dtype=np.int64),
        np.asarray(textures, dtype=np.int64),
        np.stack(masks) if has_masks else None,
        np.asarray(splits, dtype=str),
        np.asarray(base_ids, dtype=np.int64),
        seed,
    )
    if not has_masks:
        ds.notes.append("masks absent: mask-conditioned training unavailable")
    return ds


def load_image_directory(path, size: Optional[int] = None) -> LabeledDataset:
    """Unlabeled images from a plain directory (sorted by filename), resized to `size` if given."""
    path = Path(path)
    files = sorted(f for f in os.listdir(path) if f.lower().endswith((".png", ".jpg", ".jpeg", ".bmp")))
    if not files:
        raise DatasetError(f"{path}: no images found")
    images = []
    for name in files:
        with Image.open(path / name) as im:
            im = im.convert("RGB")
            if size is not None and im.size != (size, size):
                im = im.resize((size, size), Image.BILINEAR)
            images.append(np.asarray(im))
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise DatasetError(f"{path}: images have different sizes {sorted(shapes)}; pass a target size")
    n = len(images)
    ds = LabeledDataset(
        np.stack(images),
        np.full(n, -1, dtype=np.int64),
        np.full(n, -1, dtype=np.int64),
        None,
        np.full(n, "train"),
        np.arange(n),
    )
    ds.notes.append("external images: no labels, no masks")
    return ds


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 1.0


def is_four_connected(mask: np.ndarray) -> bool:
    _, n = ndimage.label(mask)
    return n == 1


def area_fraction(mask: np.ndarray) -> float:
    return float(np.mean(mask))


def expected_cell_counts(n_items: int) -> tuple[int, int]:
    """(min, max) per-cell count for a balanced grid of `n_items` base items."""
    lo = n_items // N_CELLS
    return lo, lo + (1 if n_items % N_CELLS else 0)


__all__ = [
    "DatasetError",
    "LabeledDataset",
    "LabeledItem",
    "N_CELLS",
    "N_SHAPES",
    "N_TEXTURES",
    "RTW_ITEM_COUNT",
    "SHAPE_NAMES",
    "TEXTURE_NAMES",
    "apply_jitter",
    "area_fraction",
    "expected_cell_counts",
    "generate_dataset",
    "is_four_connected",
    "jitter",
    "load_dataset",
    "load_image_directory",
    "mask_iou",
    "render_item",
    "save_dataset",
]
