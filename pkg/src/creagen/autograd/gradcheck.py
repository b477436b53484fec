"""Central finite-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, backward


class NondeterministicFunction(ValueError):
    """The checked function returned different values for the same input."""


@dataclass
class TensorCheck:
    index: int
    shape: tuple[int, ...]
    max_abs_error: float
    max_rel_error: float
    worst_entry: tuple[int, ...]
    kinks: int = 0


@dataclass
class GradCheckReport:
    tolerance: float
    eps: float
    checks: list[TensorCheck] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((c.max_rel_error for c in self.checks), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    @property
    def kinks(self) -> int:
        return sum(c.kinks for c in self.checks)

    def worst(self, n: int = 3) -> list[TensorCheck]:
        return sorted(self.checks, key=lambda c: -c.max_rel_error)[:n]

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"{status} max_rel_error={self.max_rel_error:.3e} (tol {self.tolerance:g}, eps {self.eps:g})"]
        for c in self.worst():
            lines.append(f"  input {c.index} {c.shape}: rel={c.max_rel_error:.3e} at {c.worst_entry}")
        if self.kinks:
            lines.append(f"  {self.kinks} entries straddled a kink and were judged by one-sided differences")
        return "\n".join(lines)


def grad_check(
    function: Callable[..., Tensor],
    point: Sequence[Tensor],
    eps: float = 1e-5,
    tolerance: float = 1e-4,
    max_entries: Optional[int] = None,
    seed: int = 0,
    kink_aware: bool = False,
) -> GradCheckReport:
    """Compare analytic gradients of ``function(*point)`` with central differences.

    The relative error of one input is ``max|analytic - numeric| / max|numeric|``
    (the denominator floored at 1e-8), so an analytic gradient that is off by a
    factor of two reports 1.0.

    Args:
        function: maps the tensors in `point` to a scalar tensor.
        point: float64 tensors to differentiate against; their ``.grad`` is reset.
        eps: finite-difference step.
        tolerance: pass threshold on the maximum relative error.
        max_entries: check at most this many randomly chosen entries per tensor.
        seed: chooses the entries when `max_entries` subsamples.
        kink_aware: for piecewise-linear networks. An entry whose central
            difference disagrees is re-judged with one-sided differences; if
            the left and right slopes differ (a ReLU or |x| kink lies within
            eps) the analytic value must match one of them instead.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    for t in point:
        if t.dtype != np.float64:
            raise ValueError(f"gradient checks run at 64-bit precision, got {t.dtype}")
    base = function(*point).data.copy()
    again = function(*point).data
    if not np.array_equal(base, again):
        raise NondeterministicFunction("function returned different values on repeated evaluation")

    for t in point:
        t.requires_grad = True
        t.zero_grad()
    loss = function(*point)
    backward(loss)
    analytic = [t.grad.copy() for t in point]
    for t in point:
        t.zero_grad()

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance, eps=eps)
    for idx, (t, a) in enumerate(zip(point, analytic)):
        flat = t.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(len(entries))
        left = np.empty(len(entries))
        right = np.empty(len(entries))
        f0 = float(base)
        for j, e in enumerate(entries):
            orig = flat[e]
            flat[e] = orig + eps
            f_plus = float(function(*point).data)
            flat[e] = orig - eps
            f_minus = float(function(*point).data)
            flat[e] = orig
            numeric[j] = (f_plus - f_minus) / (2.0 * eps)
            left[j] = (f0 - f_minus) / eps
            right[j] = (f_plus - f0) / eps
        a_sel = a.reshape(-1)[entries]
        diff = np.abs(a_sel - numeric)
        denom = max(float(np.max(np.abs(numeric), initial=0.0)), 1e-8)
        kinks = 0
        if kink_aware:
            bad = diff > tolerance * denom
            kinked = bad & (np.abs(left - right) > tolerance * denom)
            one_sided = np.minimum(np.abs(a_sel - left), np.abs(a_sel - right))
            diff = np.where(kinked, one_sided, diff)
            kinks = int(np.count_nonzero(kinked))
        worst = int(np.argmax(diff)) if diff.size else 0
        report.checks.append(
            TensorCheck(
                index=idx,
                shape=t.shape,
                max_abs_error=float(diff.max(initial=0.0)),
                max_rel_error=float(diff.max(initial=0.0) / denom),
                worst_entry=tuple(int(i) for i in np.unravel_index(entries[worst], t.shape)) if diff.size else (),
                kinks=kinks,
            )
        )
    return report
