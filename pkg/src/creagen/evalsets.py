"""Evaluation-set selection over a population of generated images.

Eight possibly overlapping sets are drawn from one metric report: high and
low shape entropy, high and low texture entropy, high and low NN distance,
a seeded random sample, and a mixed set favouring images that have both
low shape entropy and high NN distance.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import ValidationError

SET_METRICS = OrderedDict(
    [
        ("shape_entropy", "shape_confusion"),
        ("texture_entropy", "texture_confusion"),
        ("nn_distance", "nn_distance"),
    ]
)
SET_NAMES = (
    "high_shape_entropy",
    "low_shape_entropy",
    "high_texture_entropy",
    "low_texture_entropy",
    "high_nn_distance",
    "low_nn_distance",
    "random",
    "mixed_low_shape_entropy_high_nn",
)
DEFAULT_SET_SIZE = 100


def ranked(ids: np.ndarray, values: np.ndarray, descending: bool) -> np.ndarray:
    """Ids ordered by value (descending or ascending), ties by ascending id."""
    key = -values if descending else values
    return ids[np.lexsort((ids, key))]


def _rank_positions(order: np.ndarray) -> dict:
    return {int(i): pos for pos, i in enumerate(order)}


def select_sets(report, population=None, size: int = DEFAULT_SET_SIZE, seed: int = 0) -> "OrderedDict[str, list]":
    """Return set name -> ordered list of ids.

    ``report`` is a MetricReport (or any object with ``ids`` and a ``column``
    method); ``population`` restricts selection to a subset of its ids.
    """
    all_ids = np.asarray(report.ids, dtype=np.int64)
    if len(np.unique(all_ids)) != len(all_ids):
        raise ValidationError("report contains duplicate image ids")
    pop = all_ids if population is None else np.asarray(population, dtype=np.int64)
    pop = np.unique(pop)
    if size < 1:
        raise ValidationError(f"set size must be >= 1, got {size}")
    if len(pop) < 2 * size:
        raise ValidationError(f"population of {len(pop)} is smaller than 2 x set size ({2 * size})")
    row_of = {int(i): r for r, i in enumerate(all_ids)}
    missing = [int(i) for i in pop if int(i) not in row_of]
    if missing:
        raise ValidationError(f"report does not cover ids {missing[:5]}")
    rows = np.array([row_of[int(i)] for i in pop])

    sets: "OrderedDict[str, list]" = OrderedDict()
    orders = {}
    for short, column in SET_METRICS.items():
        values = np.asarray(report.column(column), dtype=np.float64)[rows]
        if not np.all(np.isfinite(values)):
            raise ValidationError(f"column {column} has non-finite values")
        orders[("high", short)] = ranked(pop, values, True)
        orders[("low", short)] = ranked(pop, values, False)
        sets[f"high_{short}"] = orders[("high", short)][:size].tolist()
        sets[f"low_{short}"] = orders[("low", short)][:size].tolist()

    rng = np.random.default_rng(seed)
    sets["random"] = np.sort(rng.choice(pop, size=size, replace=False)).tolist()

    low_shape = _rank_positions(orders[("low", "shape_entropy")])
    high_nn = _rank_positions(orders[("high", "nn_distance")])
    summed = np.array([low_shape[int(i)] + high_nn[int(i)] for i in pop], dtype=np.int64)
    sets["mixed_low_shape_entropy_high_nn"] = ranked(pop, summed, False)[:size].tolist()
    return OrderedDict((name, [int(i) for i in sets[name]]) for name in SET_NAMES)


def sets_to_json(sets: dict, extra: Optional[dict] = None) -> str:
    doc = {"sets": {k: list(v) for k, v in sets.items()}}
    if extra:
        doc.update(extra)
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def read_sets(path) -> "OrderedDict[str, list]":
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ValidationError(f"cannot read set file {path}: {err}") from None
    sets = doc.get("sets") if isinstance(doc, dict) else None
    if not isinstance(sets, dict):
        raise ValidationError(f"{path}: expected an object with a 'sets' mapping")
    return OrderedDict((k, [int(i) for i in sets[k]]) for k in SET_NAMES if k in sets)


def gallery(images: np.ndarray, columns: int = 10, pad: int = 2) -> Image.Image:
    """Tile (N, H, W, 3) images in [0, 1] into one RGB grid."""
    images = np.asarray(images)
    n, h, w = images.shape[:3]
    cols = min(columns, n)
    rows = -(-n // cols)
    canvas = np.full((rows * (h + pad) + pad, cols * (w + pad) + pad, 3), 128, dtype=np.uint8)
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        canvas[y : y + h, x : x + w] = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    return Image.fromarray(canvas)


def save_galleries(sets: dict, images: np.ndarray, ids: np.ndarray, out_dir) -> list:
    """One PNG per set, images in set order."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    row_of = {int(i): r for r, i in enumerate(np.asarray(ids))}
    paths = []
    for name, members in sets.items():
        path = out_dir / f"{name}.png"
        gallery(images[[row_of[i] for i in members]]).save(path)
        paths.append(path)
    return paths
