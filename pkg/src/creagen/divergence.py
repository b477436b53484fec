"""Sharma-Mittal divergence family and the creativity losses built on it.

Two layers live here:

* pure numeric divergences over probability vectors (``kl_divergence``,
  ``renyi_divergence``, ``tsallis_divergence``, ``bhattacharyya_divergence``,
  ``sm_divergence``). These do not clamp; a divergent value comes back as
  ``inf``.
* differentiable losses over discriminator-branch logits (``mce_creativity_loss``,
  ``can_creativity_loss``, ``sm_creativity_loss``, ``classification_loss``).

Sharma-Mittal form used throughout::

    SM_{a,b}(p || q) = ( (sum_i p_i^a q_i^(1-a)) ^ ((1-b)/(1-a)) - 1 ) / (b - 1)

with the exponent on the sum. This is the form whose b->1 limit is Renyi,
b=a is Tsallis and a,b->1 is KL. The half-order Renyi value equals twice the
Bhattacharyya distance ``-ln sum sqrt(p q)``.

The creativity direction is SM(u || softmax), u uniform, so that the KL member
of the family is exactly the multi-class cross-entropy loss minus ln K.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .autograd import Tensor
from .autograd import functional as F

PROB_TOL = 1e-9


@dataclass(frozen=True)
class Distribution:
    """Probability vector over K >= 2 classes."""

    probabilities: tuple

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if p.ndim != 1 or p.size < 2:
            raise ValueError(f"a distribution needs a 1-d vector of length >= 2, got shape {p.shape}")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probabilities", tuple(float(v) for v in p))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probabilities, dtype=dtype or np.float64)

    def __len__(self):
        return len(self.probabilities)


@dataclass(frozen=True)
class SMParams:
    """Sharma-Mittal orders; the limit cases are separate named functions."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.alpha == 1:
            raise ValueError("alpha = 1 is a limit case; use kl_divergence / renyi_divergence")
        if self.beta == 1:
            raise ValueError("beta = 1 is a limit case; use renyi_divergence")


def _pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(Distribution(tuple(np.asarray(p, dtype=np.float64))))
    q = np.asarray(Distribution(tuple(np.asarray(q, dtype=np.float64))))
    if p.shape != q.shape:
        raise ValueError(f"distributions have different lengths: {p.size} vs {q.size}")
    return p, q


def _power_sum(p: np.ndarray, q: np.ndarray, alpha: float) -> float:
    """sum_i p_i^alpha q_i^(1-alpha) over the support of p."""
    support = p > 0
    with np.errstate(divide="ignore", over="ignore"):
        terms = p[support] ** alpha * q[support] ** (1.0 - alpha)
    return float(np.sum(terms))


def kl_divergence(p, q) -> float:
    p, q = _pair(p, q)
    support = p > 0
    if np.any(q[support] == 0):
        return math.inf
    return float(np.sum(p[support] * np.log(p[support] / q[support])))


def renyi_divergence(p, q, alpha: float) -> float:
    if not alpha > 0 or alpha == 1:
        raise ValueError(f"Renyi order must be > 0 and != 1, got {alpha}")
    p, q = _pair(p, q)
    s = _power_sum(p, q, alpha)
    if s == 0:
        return math.inf
    if math.isinf(s):
        return math.inf
    return math.log(s) / (alpha - 1.0)


def tsallis_divergence(p, q, alpha: float) -> float:
    if not alpha > 0 or alpha == 1:
        raise ValueError(f"Tsallis order must be > 0 and != 1, got {alpha}")
    p, q = _pair(p, q)
    s = _power_sum(p, q, alpha)
    return (s - 1.0) / (alpha - 1.0)


def bhattacharyya_divergence(p, q) -> float:
    p, q = _pair(p, q)
    bc = float(np.sum(np.sqrt(p * q)))
    if bc == 0:
        return math.inf
    return -math.log(bc)


def sm_divergence(p, q, params: SMParams) -> float:
    """Sharma-Mittal divergence; ``inf`` when the power sum diverges or vanishes under a negative exponent."""
    p, q = _pair(p, q)
    a, b = params.alpha, params.beta
    s = _power_sum(p, q, a)
    expo = (1.0 - b) / (1.0 - a)
    if expo == 1.0:
        # Tsallis member; keep it bit-identical to tsallis_divergence
        return (s - 1.0) / (b - 1.0)
    if s == 0.0:
        return math.inf if expo < 0 else -1.0 / (b - 1.0)
    if math.isinf(s):
        return math.inf if expo > 0 else -1.0 / (b - 1.0)
    return math.expm1(expo * math.log(s)) / (b - 1.0)


# ------------------------------------------------------------------ losses
LossTag = Union[SMParams, str, tuple]


def _check_logits(logits: Tensor) -> int:
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ValueError(f"logits must be (batch, K) with K >= 2, got {logits.shape}")
    return logits.shape[1]


def _reduce(per_sample: Tensor, reduction: str) -> Tensor:
    if reduction == "sum":
        return F.sum(per_sample)
    if reduction == "mean":
        return F.mean(per_sample)
    if reduction == "none":
        return per_sample
    raise ValueError(f"unknown reduction {reduction!r}")


def mce_creativity_loss(logits: Tensor, reduction: str = "sum") -> Tensor:
    """Cross-entropy between the uniform distribution and softmax(logits)."""
    _check_logits(logits)
    per_sample = F.scale(F.mean(F.log_softmax(logits, axis=1), axis=1), -1.0)
    return _reduce(per_sample, reduction)


def can_creativity_loss(logits: Tensor, reduction: str = "sum") -> Tensor:
    """Per-class binary cross-entropies pulling every class sigmoid towards 1/K."""
    k = _check_logits(logits)
    pos = F.log_sigmoid(logits)
    neg = F.log_sigmoid(F.scale(logits, -1.0))
    per_class = F.add(F.scale(pos, 1.0 / k), F.scale(neg, (k - 1.0) / k))
    per_sample = F.scale(F.sum(per_class, axis=1), -1.0)
    return _reduce(per_sample, reduction)


_TAG_RE = re.compile(r"^(renyi|tsallis)\(([^)]+)\)$")
_SM_RE = re.compile(r"^sm\(([^,]+),([^)]+)\)$")


def parse_loss_tag(tag: LossTag) -> LossTag:
    """Normalize 'kl' | 'bhattacharyya' | 'renyi(a)' | 'tsallis(a)' | 'sm(a,b)' | SMParams."""
    if isinstance(tag, SMParams):
        return tag
    if isinstance(tag, tuple):
        name, value = tag
        return parse_loss_tag(f"{name}({value})")
    text = str(tag).replace(" ", "").lower()
    if text in ("kl", "bhattacharyya"):
        return text
    m = _SM_RE.match(text)
    if m:
        return SMParams(float(m.group(1)), float(m.group(2)))
    m = _TAG_RE.match(text)
    if m:
        alpha = float(m.group(2))
        if not alpha > 0 or alpha == 1:
            raise ValueError(f"{m.group(1)} order must be > 0 and != 1, got {alpha}")
        return (m.group(1), alpha)
    raise ValueError(f"unknown divergence tag {tag!r}")


def sm_creativity_loss(logits: Tensor, params: LossTag, reduction: str = "sum") -> Tensor:
    """Sharma-Mittal divergence SM(u || softmax(logits)) summed over the batch.

    `params` is an `SMParams` or a limit tag: 'kl', 'bhattacharyya',
    'renyi(a)', 'tsallis(a)' (or 'sm(a,b)').
    """
    k = _check_logits(logits)
    tag = parse_loss_tag(params)
    log_q = F.log_softmax(logits, axis=1)
    log_k = math.log(k)
    if tag == "kl":
        per_sample = F.shift(F.scale(F.mean(log_q, axis=1), -1.0), -log_k)
        return _reduce(per_sample, reduction)
    if tag == "bhattacharyya":
        # -ln sum_k sqrt(q_k / K)
        bc = F.sum(F.exp(F.shift(F.scale(log_q, 0.5), -0.5 * log_k)), axis=1)
        return _reduce(F.scale(F.log(bc), -1.0), reduction)
    alpha = tag[1] if isinstance(tag, tuple) else tag.alpha
    # sum_k u^alpha q_k^(1-alpha) with u = 1/K
    power_sum = F.sum(F.exp(F.shift(F.scale(log_q, 1.0 - alpha), -alpha * log_k)), axis=1)
    if isinstance(tag, tuple) and tag[0] == "renyi":
        per_sample = F.scale(F.log(power_sum), 1.0 / (alpha - 1.0))
    elif isinstance(tag, tuple):
        per_sample = F.scale(F.shift(power_sum, -1.0), 1.0 / (alpha - 1.0))
    else:
        beta = tag.beta
        expo = (1.0 - beta) / (1.0 - alpha)
        powered = power_sum if expo == 1.0 else F.exp(F.scale(F.log(power_sum), expo))
        per_sample = F.scale(F.shift(powered, -1.0), 1.0 / (beta - 1.0))
    return _reduce(per_sample, reduction)


def classification_loss(logits: Tensor, labels, reduction: str = "sum") -> Tensor:
    """Negative log-softmax at the true class."""
    k = _check_logits(logits)
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],) or not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"labels must be an integer vector of length {logits.shape[0]}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(len(labels)), labels] = 1.0
    picked = F.sum(F.mul(F.log_softmax(logits, axis=1), Tensor(onehot)), axis=1)
    return _reduce(F.scale(picked, -1.0), reduction)


def creativity_loss(logits: Tensor, mode: str, reduction: str = "sum") -> Tensor:
    """Dispatch on a config string: 'can', 'mce', or any tag accepted by `sm_creativity_loss`."""
    mode = mode.strip().lower()
    if mode == "can":
        return can_creativity_loss(logits, reduction)
    if mode == "mce":
        return mce_creativity_loss(logits, reduction)
    return sm_creativity_loss(logits, mode, reduction)


def validate_creativity(mode: str) -> str:
    mode = mode.strip().lower()
    if mode in ("none", "can", "mce"):
        return mode
    parse_loss_tag(mode)
    return mode
