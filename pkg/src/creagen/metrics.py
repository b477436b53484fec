"""Automatic evaluation metrics and the shape/texture classifier behind them.

Per image: shape and texture confusion (softmax entropy), mean distance to
the k nearest training features, darkness, average intensity, skewness.
Per set: inception-like and AM scores for each head, mean NN distance and
the predicted-category histograms.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats

from . import checkpoint as ckpt_io
from .autograd import Tensor, backward
from .autograd import functional as F
from .divergence import classification_loss
from .errors import ValidationError
from .nets import Classifier, NetworkSpec, build, images_to_tensor
from .nn import Adam

HEADS = ("shape", "texture")
DARK_THRESHOLD = 0.35
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
ACCURACY_FLOOR = 0.90
AM_CLAMP = 1e-12
DEFAULT_K = 10


# ----------------------------------------------------------- classifier
@dataclass
class ClassifierBundle:
    net: Classifier
    c_train: dict  # head -> mean softmax over the training split
    accuracy: dict  # head -> held-out accuracy
    warnings: list = field(default_factory=list)
    seed: int = 0

    @property
    def spec(self) -> NetworkSpec:
        return self.net.spec

    @property
    def feature_dim(self) -> int:
        return self.net.spec.feature_dim

    def predict(self, images: np.ndarray, batch: int = 256):
        """Images (N, H, W, 3) in [0, 1] -> (features, shape probs, texture probs)."""
        images = np.asarray(images)
        size = self.spec.size
        if images.ndim != 4 or images.shape[1:] != (size, size, 3):
            raise ValidationError(f"classifier expects (N, {size}, {size}, 3) images, got {images.shape}")
        feats, ps, pt = [], [], []
        self.net.eval()
        for lo in range(0, len(images), batch):
            x = images_to_tensor(images[lo : lo + batch], self.spec.dtype)
            f, ls, lt = self.net(x)
            feats.append(f.data.astype(np.float64))
            ps.append(softmax_np(ls.data))
            pt.append(softmax_np(lt.data))
        return np.concatenate(feats), np.concatenate(ps), np.concatenate(pt)

    def probs(self, images: np.ndarray, head: str) -> np.ndarray:
        _, ps, pt = self.predict(images)
        return ps if _check_head(head) == "shape" else pt

    def features(self, images: np.ndarray) -> np.ndarray:
        return self.predict(images)[0]

    def save(self, path) -> Path:
        meta = {
            "accuracy": self.accuracy,
            "c_train": {k: [float(v) for v in self.c_train[k]] for k in HEADS},
            "seed": self.seed,
            "warnings": list(self.warnings),
        }
        spec = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.spec.__dict__.items()}
        return ckpt_io.save(path, ckpt_io.Checkpoint({"C": spec}, ckpt_io.pack_modules({"C": self.net}), meta, "float64"))

    @classmethod
    def load(cls, path) -> "ClassifierBundle":
        ck = ckpt_io.load(path)
        if "C" not in ck.specs:
            raise ValidationError(f"{path} is not a classifier checkpoint")
        net = build(NetworkSpec.from_dict(ck.specs["C"]), 0)
        net.load_state_dict(ck.group("C"))
        m = ck.meta
        c_train = {k: np.asarray(m["c_train"][k]) for k in HEADS}
        return cls(net, c_train, m["accuracy"], list(m.get("warnings", [])), m.get("seed", 0))


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_head(head: str) -> str:
    if head not in HEADS:
        raise ValidationError(f"head must be 'shape' or 'texture', got {head!r}")
    return head


def train_classifier(
    dataset,
    seed: int = 0,
    epochs: int = 2,
    batch_size: int = 64,
    lr: float = 0.002,
    width_scale: float = 0.25,
    feature_dim: int = 128,
    dtype: str = "float64",
    progress=None,
) -> ClassifierBundle:
    """Train the two-head classifier on the train split; accuracy is measured on the val split."""
    if not dataset.has_labels:
        raise ValidationError("classifier training needs shape and texture labels")
    train_idx = dataset.indices("train")
    val_idx = dataset.indices("val")
    if len(train_idx) < batch_size:
        raise ValidationError(f"training split has {len(train_idx)} items, fewer than batch_size {batch_size}")
    spec = NetworkSpec("classifier", size=dataset.size, width_scale=width_scale, feature_dim=feature_dim, dtype=dtype)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    net = build(spec, int(rng.integers(2**31)))
    opt = Adam(net.parameters(), lr=lr)
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(train_idx)
        for lo in range(0, len(order) - batch_size + 1, batch_size):
            sel = np.sort(order[lo : lo + batch_size])
            x = images_to_tensor(dataset.float_images(sel), dtype)
            net.train()
            opt.zero_grad()
            _, ls, lt = net(x)
            loss = F.add(
                classification_loss(ls, dataset.shape_labels[sel], "mean"),
                classification_loss(lt, dataset.texture_labels[sel], "mean"),
            )
            backward(loss)
            opt.step()
            step += 1
            if progress:
                progress(epoch, step, float(loss.item()))
    bundle = ClassifierBundle(net, {}, {}, seed=seed)
    _, ps, pt = bundle.predict(dataset.float_images(train_idx))
    bundle.c_train = {"shape": ps.mean(axis=0), "texture": pt.mean(axis=0)}
    eval_idx = val_idx if len(val_idx) else train_idx
    if not len(val_idx):
        bundle.warnings.append("no validation split; accuracy measured on training data")
    _, ps, pt = bundle.predict(dataset.float_images(eval_idx))
    bundle.accuracy = {
        "shape": float(np.mean(ps.argmax(axis=1) == dataset.shape_labels[eval_idx])),
        "texture": float(np.mean(pt.argmax(axis=1) == dataset.texture_labels[eval_idx])),
    }
    for head in HEADS:
        if bundle.accuracy[head] < ACCURACY_FLOOR:
            bundle.warnings.append(f"{head} accuracy {bundle.accuracy[head]:.4f} below floor {ACCURACY_FLOOR}")
    return bundle


# ------------------------------------------------- probability-level scores
def _check_probs(p: np.ndarray, min_rows: int = 1) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < min_rows or p.shape[1] < 2:
        raise ValidationError(f"expected an (N >= {min_rows}, K >= 2) probability matrix, got shape {p.shape}")
    return p


def _kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise KL(p || q) with 0 ln 0 = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return terms.sum(axis=-1)


def entropy_rows(p: np.ndarray) -> np.ndarray:
    p = _check_probs(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.where(p > 0, p * np.log(p), 0.0).sum(axis=1)


def inception_like_from_probs(p: np.ndarray) -> float:
    """exp(mean_x KL(c(x) || mean_x c(x)))."""
    p = _check_probs(p, 2)
    marginal = p.mean(axis=0)
    return float(math.exp(_kl_rows(p, marginal[None, :]).mean()))


def am_from_probs(p: np.ndarray, c_train) -> tuple[float, bool]:
    """mean_x KL(c_train || c(x)) - KL(c_train || mean_x c(x)); returns (score, clamped)."""
    p = _check_probs(p, 1)
    c = np.asarray(c_train, dtype=np.float64)
    if c.shape != (p.shape[1],):
        raise ValidationError(f"c_train has shape {c.shape}, expected ({p.shape[1]},)")
    clamped = bool(np.any((p < AM_CLAMP) & (c[None, :] > 0)))
    q = np.maximum(p, AM_CLAMP) if clamped else p
    first = _kl_rows(np.broadcast_to(c, q.shape), q).mean()
    second = _kl_rows(c, np.maximum(p.mean(axis=0), AM_CLAMP))
    return float(first - second), clamped


def histogram_from_probs(p: np.ndarray) -> np.ndarray:
    p = _check_probs(p)
    return np.bincount(p.argmax(axis=1), minlength=p.shape[1])


# --------------------------------------------------- image-level wrappers
def inception_like_score(images, head: str, bundle: ClassifierBundle) -> float:
    return inception_like_from_probs(bundle.probs(images, head))


def am_score(images, head: str, bundle: ClassifierBundle) -> float:
    return am_from_probs(bundle.probs(images, head), bundle.c_train[_check_head(head)])[0]


def confusion_score(image, head: str, bundle: ClassifierBundle) -> float:
    return float(entropy_rows(bundle.probs(np.asarray(image)[None], head))[0])


def category_histogram(images, head: str, bundle: ClassifierBundle) -> np.ndarray:
    return histogram_from_probs(bundle.probs(images, head))


def nn_distance(query_features: np.ndarray, train_features: np.ndarray, k: int = DEFAULT_K, chunk: int = 64) -> np.ndarray:
    """Per query, the mean Euclidean distance to its k nearest training features (exact)."""
    q = np.asarray(query_features, dtype=np.float64)
    t = np.asarray(train_features, dtype=np.float64)
    if q.ndim != 2 or t.ndim != 2 or q.shape[1] != t.shape[1]:
        raise ValidationError(f"feature matrices must be 2-d with equal width, got {q.shape} and {t.shape}")
    if not 1 <= k <= len(t):
        raise ValidationError(f"k must be in [1, {len(t)}] (training-set size), got {k}")
    out = np.empty(len(q))
    for lo in range(0, len(q), chunk):
        diff = q[lo : lo + chunk, None, :] - t[None, :, :]
        d = np.sqrt(np.sum(diff * diff, axis=-1))
        nearest = np.sort(np.partition(d, k - 1, axis=1)[:, :k], axis=1)
        out[lo : lo + chunk] = nearest.mean(axis=1)
    return out


def luma(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim < 3 or img.shape[-1] != 3:
        raise ValidationError(f"expected RGB images with a trailing channel axis of 3, got {img.shape}")
    return img @ LUMA_WEIGHTS


def photometrics(image: np.ndarray) -> tuple[int, float, float]:
    """(darkness, average intensity, skewness) from BT.601 luma of an RGB image in [0, 1]."""
    y = luma(image).ravel()
    darkness = int(np.count_nonzero(y < DARK_THRESHOLD))
    skew = 0.0 if np.ptp(y) == 0 else float(stats.skew(y, bias=True))
    return darkness, float(y.mean()), skew


# ----------------------------------------------------------------- report
PER_IMAGE_COLUMNS = (
    "id",
    "shape_confusion",
    "texture_confusion",
    "nn_distance",
    "darkness",
    "avg_intensity",
    "skewness",
    "pred_shape",
    "pred_texture",
)


@dataclass
class MetricReport:
    ids: np.ndarray
    shape_confusion: np.ndarray
    texture_confusion: np.ndarray
    nn_distance: np.ndarray
    darkness: np.ndarray
    avg_intensity: np.ndarray
    skewness: np.ndarray
    pred_shape: np.ndarray
    pred_texture: np.ndarray
    summary: dict

    def __len__(self) -> int:
        return len(self.ids)

    def column(self, name: str) -> np.ndarray:
        if name not in PER_IMAGE_COLUMNS:
            raise KeyError(name)
        return np.asarray(self.ids if name == "id" else getattr(self, name))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(PER_IMAGE_COLUMNS)
        for i in range(len(self)):
            w.writerow(
                [
                    int(self.ids[i]),
                    repr(float(self.shape_confusion[i])),
                    repr(float(self.texture_confusion[i])),
                    repr(float(self.nn_distance[i])),
                    int(self.darkness[i]),
                    repr(float(self.avg_intensity[i])),
                    repr(float(self.skewness[i])),
                    int(self.pred_shape[i]),
                    int(self.pred_texture[i]),
                ]
            )
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps(self.summary, sort_keys=True, indent=2) + "\n"

    @classmethod
    def read_csv(cls, path, summary: Optional[dict] = None) -> "MetricReport":
        path = Path(path)
        try:
            with open(path, newline="") as fh:
                reader = csv.DictReader(fh)
                missing = [c for c in PER_IMAGE_COLUMNS if c not in (reader.fieldnames or [])]
                if missing:
                    raise ValidationError(f"{path}: missing columns {missing}")
                rows = list(reader)
        except OSError as err:
            raise ValidationError(f"cannot read metrics file {path}: {err}") from None
        ints = {"id", "darkness", "pred_shape", "pred_texture"}
        cols = {}
        for c in PER_IMAGE_COLUMNS:
            try:
                cols[c] = np.array([int(r[c]) if c in ints else float(r[c]) for r in rows])
            except ValueError as err:
                raise ValidationError(f"{path}: bad value in column {c}: {err}") from None
        cols["ids"] = cols.pop("id")
        return cls(**cols, summary=summary or {})


def compute_metrics(
    images: np.ndarray,
    bundle: ClassifierBundle,
    train_features: np.ndarray,
    ids: Optional[np.ndarray] = None,
    k: int = DEFAULT_K,
) -> MetricReport:
    """All per-image and per-set metrics for one set of generated images in [0, 1]."""
    images = np.asarray(images)
    n = len(images)
    if n < 2:
        raise ValidationError("metrics need at least 2 images")
    ids = np.arange(n) if ids is None else np.asarray(ids)
    feats, ps, pt = bundle.predict(images)
    nn = nn_distance(feats, train_features, k)
    photo = np.array([photometrics(im) for im in images], dtype=np.float64).reshape(n, 3)
    am_s, clamp_s = am_from_probs(ps, bundle.c_train["shape"])
    am_t, clamp_t = am_from_probs(pt, bundle.c_train["texture"])
    summary = {
        "n_images": n,
        "k": k,
        "inception_shape": inception_like_from_probs(ps),
        "inception_texture": inception_like_from_probs(pt),
        "am_shape": am_s,
        "am_texture": am_t,
        "am_clamped": {"shape": clamp_s, "texture": clamp_t},
        "mean_nn_distance": float(nn.mean()),
        "mean_shape_confusion": float(entropy_rows(ps).mean()),
        "mean_texture_confusion": float(entropy_rows(pt).mean()),
        "shape_histogram": histogram_from_probs(ps).tolist(),
        "texture_histogram": histogram_from_probs(pt).tolist(),
        "classifier_accuracy": dict(bundle.accuracy),
        "classifier_warnings": list(bundle.warnings),
    }
    return MetricReport(
        ids=ids,
        shape_confusion=entropy_rows(ps),
        texture_confusion=entropy_rows(pt),
        nn_distance=nn,
        darkness=photo[:, 0].astype(np.int64),
        avg_intensity=photo[:, 1],
        skewness=photo[:, 2],
        pred_shape=ps.argmax(axis=1),
        pred_texture=pt.argmax(axis=1),
        summary=summary,
    )
