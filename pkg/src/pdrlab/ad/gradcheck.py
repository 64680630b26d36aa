"""Finite-difference checks for analytic gradients."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)


def numerical_grad(
    fn: Callable[[], Tensor],
    x: Tensor,
    flat_indices: Sequence[int],
    eps: float = 1e-4,
) -> np.ndarray:
    """Fourth-order central differences of scalar ``fn()`` w.r.t. selected entries of ``x``.

    f'(x) ~ (8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h
    """
    out = np.empty(len(flat_indices), dtype=np.float64)
    if not x.data.flags.c_contiguous:
        x.data = np.ascontiguousarray(x.data)
    flat = x.data.reshape(-1)

    def at(i: int, value: float) -> float:
        flat[i] = value
        return fn().item()

    with no_grad():
        for n, i in enumerate(flat_indices):
            original = flat[i]
            near = at(i, original + eps) - at(i, original - eps)
            far = at(i, original + 2.0 * eps) - at(i, original - 2.0 * eps)
            flat[i] = original
            out[n] = (8.0 * near - far) / (12.0 * eps)
    return out


@dataclass
class GradcheckReport:
    """Worst relative error plus which entries were compared."""

    worst: float = 0.0
    checked: int = 0
    per_input: list[int] = field(default_factory=list)


def gradcheck_report(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-4,
    max_checks: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-12,
) -> GradcheckReport:
    """Compare backward() with central differences entry by entry.

    ``fn`` closes over ``inputs`` and returns a scalar. The relative error of
    one entry is |analytic - numeric| / max(|analytic|, |numeric|, floor).
    With ``max_checks`` set, that many entries per input are sampled.
    """
    for x in inputs:
        if x.dtype != np.float64:
            logger.warning(f"gradcheck on {x.dtype} input; tolerances assume float64")
        x.zero_grad()

    loss = fn()
    loss.backward()

    picker = rng if rng is not None else np.random.default_rng(0)
    report = GradcheckReport()
    for x in inputs:
        analytic = np.zeros(x.shape) if x.grad is None else x.grad.astype(np.float64)
        flat_indices = np.arange(x.size)
        if max_checks is not None and x.size > max_checks:
            flat_indices = np.sort(picker.choice(x.size, size=max_checks, replace=False))
        numeric = numerical_grad(fn, x, flat_indices, eps)
        a = analytic.reshape(-1)[flat_indices]
        scale = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        if len(flat_indices):
            report.worst = max(report.worst, float(np.max(np.abs(a - numeric) / scale)))
        report.checked += len(flat_indices)
        report.per_input.append(len(flat_indices))
    return report


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-4,
    max_checks: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-12,
) -> float:
    """Worst relative error between backward() and central differences."""
    return gradcheck_report(fn, inputs, eps, max_checks, rng, floor).worst
