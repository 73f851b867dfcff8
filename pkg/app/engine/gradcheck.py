"""Central finite-difference gradient checking."""

from __future__ import annotations

from contextlib import nullcontext
from typing import (
    Callable,
    Sequence,
)

import numpy as np

from app.engine.tensor import (
    DiffTensor,
    backward,
    recording_relu_masks,
)


def numerical_gradient(fn: Callable[[], DiffTensor], tensor: DiffTensor, h: float = 1e-5) -> np.ndarray:
    """Estimate d fn() / d tensor by perturbing each entry of ``tensor.values`` in place."""
    grad = np.zeros_like(tensor.values)
    flat = tensor.values.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = fn().item()
        flat[i] = orig - h
        minus = fn().item()
        flat[i] = orig
        out[i] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Element-wise |a - n| / max(|a|, |n|, floor), maximised."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradcheck(
    fn: Callable[[], DiffTensor],
    inputs: Sequence[DiffTensor],
    h: float = 1e-5,
    floor: float = 1e-8,
    freeze_relu: bool = False,
) -> float:
    """Compare backward() against central differences for every tensor in ``inputs``.

    ``fn`` must rebuild the graph from ``inputs`` on every call and return a
    scalar. Returns the largest relative error seen.

    With ``freeze_relu`` the ReLU masks of the unperturbed pass are replayed
    while differencing. A deep ReLU network evaluated on thousands of positions
    nearly always has some pre-activation within ``h`` of zero, and a single
    flipped mask there moves the difference quotient away from the derivative
    that ``backward`` computes at the base point.
    """
    for t in inputs:
        t.zero_grad()
    with recording_relu_masks() if freeze_relu else nullcontext() as tape:
        backward(fn())
    analytic = [np.zeros_like(t.values) if t.grad is None else t.grad.copy() for t in inputs]
    worst = 0.0
    with recording_relu_masks(tape) if freeze_relu else nullcontext():
        for t, a in zip(inputs, analytic):
            worst = max(worst, relative_error(a, numerical_gradient(fn, t, h), floor))
    return worst
