"""Reverse-mode differentiable arrays.

``DiffTensor`` wraps a float64 numpy array together with a lazily allocated
gradient buffer and an ``OpRecord`` describing how it was produced. The graph is
rebuilt on every forward pass (define-by-run); ``backward`` walks it once in
reverse topological order and then releases it, so a second ``backward`` over
the same graph raises ``StaleGraphError``.

All ops are module-level functions. Reductions inside the convolution kernels
run in a fixed offset order, so identical inputs give bit-identical outputs.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import (
    dataclass,
    field,
)
from typing import (
    Callable,
    Iterator,
    List,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np

from app.core.exceptions import (
    DimensionError,
    StaleGraphError,
)

_SIGMOID_LO = np.nextafter(0.0, 1.0)
_SIGMOID_HI = np.nextafter(1.0, 0.0)


@dataclass
class OpRecord:
    """Provenance of a non-leaf tensor."""

    op: str
    parents: Tuple["DiffTensor", ...]
    # maps upstream gradient -> one gradient (or None) per parent
    backward: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]
    released: bool = field(default=False)


class DiffTensor:
    """A node of the computation graph."""

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.array(values, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op_record: Optional[OpRecord] = None
        self.name = name
        self._backward_done = False

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)

    def item(self) -> float:
        if self.values.size != 1:
            raise DimensionError("item", "size", 1, self.values.size)
        return float(self.values.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.values.copy(), requires_grad=False)

    def __add__(self, other: "DiffTensor") -> "DiffTensor":
        return add(self, other)

    def __mul__(self, other: "DiffTensor") -> "DiffTensor":
        return mul(self, other)

    def __repr__(self) -> str:
        label = self.name or (self.op_record.op if self.op_record else "leaf")
        return f"DiffTensor({label}, shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(value) -> DiffTensor:
    """Wrap a constant (array, list, scalar) unless it already is a tensor."""
    if isinstance(value, DiffTensor):
        return value
    return DiffTensor(value, requires_grad=False)


def _make(values: np.ndarray, parents: Sequence[DiffTensor], op: str, backward) -> DiffTensor:
    out = DiffTensor.__new__(DiffTensor)
    out.values = values
    out.grad = None
    out.name = None
    out._backward_done = False
    out.requires_grad = any(p.requires_grad for p in parents)
    out.op_record = OpRecord(op=op, parents=tuple(parents), backward=backward) if out.requires_grad else None
    return out


def _check_same_shape(op: str, a: DiffTensor, b: DiffTensor) -> None:
    if a.shape != b.shape:
        if len(a.shape) != len(b.shape):
            raise DimensionError(op, "rank", len(a.shape), len(b.shape))
        for axis, (da, db) in enumerate(zip(a.shape, b.shape)):
            if da != db:
                raise DimensionError(op, f"dim{axis}", da, db)


# ───────────────────────────── elementwise ops ──────────────────────────────
def add(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    """Elementwise sum of two same-shape tensors."""
    _check_same_shape("add", a, b)
    return _make(a.values + b.values, (a, b), "add", lambda g: (g, g))


def mul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    """Elementwise product of two same-shape tensors."""
    _check_same_shape("mul", a, b)
    av, bv = a.values, b.values
    return _make(av * bv, (a, b), "mul", lambda g: (g * bv, g * av))


@dataclass
class ReluMaskTape:
    """ReLU masks of one forward pass, in call order.

    While recording, every ``relu`` appends its mask. While replaying, ``relu``
    reuses the recorded masks in the same order instead of testing signs, which
    makes the network a smooth function of its parameters around the recorded
    point.
    """

    masks: List[np.ndarray] = field(default_factory=list)
    replaying: bool = False
    cursor: int = 0

    def next_mask(self, values: np.ndarray) -> np.ndarray:
        if not self.replaying:
            mask = values > 0
            self.masks.append(mask)
            return mask
        mask = self.masks[self.cursor]
        if mask.shape != values.shape:
            raise DimensionError("relu", "replayed mask", mask.shape, values.shape)
        self.cursor = (self.cursor + 1) % len(self.masks)
        return mask


_mask_tape: Optional[ReluMaskTape] = None


@contextmanager
def recording_relu_masks(tape: Optional[ReluMaskTape] = None) -> Iterator[ReluMaskTape]:
    """Record (new tape) or replay (recorded tape) ReLU masks inside the block."""
    global _mask_tape
    if tape is None:
        tape = ReluMaskTape()
    else:
        tape.replaying, tape.cursor = True, 0
    previous, _mask_tape = _mask_tape, tape
    try:
        yield tape
    finally:
        _mask_tape = previous


def relu(x: DiffTensor) -> DiffTensor:
    mask = x.values > 0 if _mask_tape is None else _mask_tape.next_mask(x.values)
    return _make(np.where(mask, x.values, 0.0), (x,), "relu", lambda g: (g * mask,))


def sigmoid(x: DiffTensor) -> DiffTensor:
    """Logistic function, evaluated on the stable branch for each sign, output clipped into (0, 1)."""
    s = sigmoid_values(x.values)
    return _make(s, (x,), "sigmoid", lambda g: (g * s * (1.0 - s),))


def sigmoid_values(v: np.ndarray) -> np.ndarray:
    """Plain-array logistic function shared by the prior module."""
    v = np.asarray(v, dtype=np.float64)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return np.clip(out, _SIGMOID_LO, _SIGMOID_HI)


# ──────────────────────────────── reductions ────────────────────────────────
def sum(x: DiffTensor) -> DiffTensor:  # noqa: A001
    shape = x.shape
    return _make(np.array(x.values.sum()), (x,), "sum", lambda g: (np.full(shape, float(g)),))


def mean(x: DiffTensor) -> DiffTensor:
    shape, n = x.shape, x.size
    return _make(np.array(x.values.mean()), (x,), "mean", lambda g: (np.full(shape, float(g) / n),))


def flatten(x: DiffTensor) -> DiffTensor:
    """Collapse every axis after the batch axis."""
    shape = x.shape
    return _make(x.values.reshape(shape[0], -1), (x,), "flatten", lambda g: (g.reshape(shape),))


# ──────────────────────────────── layers ────────────────────────────────────
def conv2d(x: DiffTensor, kernel: DiffTensor, bias: DiffTensor, pad: Tuple[int, int] = (0, 0)) -> DiffTensor:
    """Stride-1 zero-padded 2-D convolution (cross-correlation).

    Shapes: x [N,C,H,W], kernel [K,C,kh,kw], bias [K] -> [N,K,H+2ph-kh+1,W+2pw-kw+1].
    """
    if x.values.ndim != 4:
        raise DimensionError("conv2d", "input rank", 4, x.values.ndim)
    if kernel.values.ndim != 4:
        raise DimensionError("conv2d", "kernel rank", 4, kernel.values.ndim)
    n, c, h, w = x.shape
    k, kc, kh, kw = kernel.shape
    ph, pw = pad
    if kc != c:
        raise DimensionError("conv2d", "channels", c, kc)
    if bias.shape != (k,):
        raise DimensionError("conv2d", "bias", (k,), bias.shape)
    if kh > h + 2 * ph:
        raise DimensionError("conv2d", "height", f"<= {h + 2 * ph}", kh)
    if kw > w + 2 * pw:
        raise DimensionError("conv2d", "width", f"<= {w + 2 * pw}", kw)

    xp = np.pad(x.values, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    wv = kernel.values
    ho, wo = h + 2 * ph - kh + 1, w + 2 * pw - kw + 1

    acc = np.zeros((n, ho, wo, k))
    for i in range(kh):
        for j in range(kw):
            acc += np.tensordot(xp[:, :, i : i + ho, j : j + wo], wv[:, :, i, j], axes=([1], [1]))
    out = np.ascontiguousarray(acc.transpose(0, 3, 1, 2)) + bias.values[None, :, None, None]

    def backward(g: np.ndarray):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wv)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + ho, j : j + wo] += np.tensordot(g, wv[:, :, i, j], axes=([1], [0])).transpose(
                    0, 3, 1, 2
                )
                gw[:, :, i, j] = np.tensordot(g, xp[:, :, i : i + ho, j : j + wo], axes=([0, 2, 3], [0, 2, 3]))
        gx = gxp[:, :, ph : ph + h, pw : pw + w]
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _make(out, (x, kernel, bias), "conv2d", backward)


def linear(x: DiffTensor, weight: DiffTensor, bias: DiffTensor) -> DiffTensor:
    """Affine map x @ weight + bias with x [N,D], weight [D,E], bias [E]."""
    if x.values.ndim != 2:
        raise DimensionError("linear", "input rank", 2, x.values.ndim)
    d, e = weight.shape
    if x.shape[1] != d:
        raise DimensionError("linear", "features", d, x.shape[1])
    if bias.shape != (e,):
        raise DimensionError("linear", "bias", (e,), bias.shape)
    xv, wv = x.values, weight.values
    out = xv @ wv + bias.values
    return _make(out, (x, weight, bias), "linear", lambda g: (g @ wv.T, xv.T @ g, g.sum(axis=0)))


def concat_channels(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    """Stack two [N,C,H,W] tensors along the channel axis."""
    if a.values.ndim != 4 or b.values.ndim != 4:
        raise DimensionError("concat_channels", "rank", 4, (a.values.ndim, b.values.ndim))
    for axis, label in ((0, "batch"), (2, "height"), (3, "width")):
        if a.shape[axis] != b.shape[axis]:
            raise DimensionError("concat_channels", label, a.shape[axis], b.shape[axis])
    ca = a.shape[1]
    out = np.concatenate([a.values, b.values], axis=1)
    return _make(out, (a, b), "concat_channels", lambda g: (g[:, :ca], g[:, ca:]))


def hadamard_landmark(w: DiffTensor, theta: DiffTensor) -> DiffTensor:
    """Scale the landmark (last) axis of W [N,C,F,L] by theta [L]."""
    if w.values.ndim != 4:
        raise DimensionError("hadamard_landmark", "rank", 4, w.values.ndim)
    if theta.shape != (w.shape[3],):
        raise DimensionError("hadamard_landmark", "landmark", w.shape[3], theta.shape)
    wv, tv = w.values, theta.values
    out = wv * tv
    return _make(out, (w, theta), "hadamard_landmark", lambda g: (g * tv, (g * wv).sum(axis=(0, 1, 2))))


def avg_pool2d(x: DiffTensor, size: int = 2) -> DiffTensor:
    """Non-overlapping average pooling; trailing rows/columns that do not fill a window are dropped."""
    n, c, h, w = x.shape
    ho, wo = h // size, w // size
    if ho == 0 or wo == 0:
        raise DimensionError("avg_pool2d", "height/width", f">= {size}", (h, w))
    cropped = x.values[:, :, : ho * size, : wo * size]
    out = cropped.reshape(n, c, ho, size, wo, size).mean(axis=(3, 5))

    def backward(g: np.ndarray):
        gx = np.zeros((n, c, h, w))
        spread = np.repeat(np.repeat(g, size, axis=2), size, axis=3) / (size * size)
        gx[:, :, : ho * size, : wo * size] = spread
        return (gx,)

    return _make(out, (x,), "avg_pool2d", backward)


def global_avg_pool(x: DiffTensor) -> DiffTensor:
    """Average over the spatial axes: [N,C,H,W] -> [N,C]."""
    n, c, h, w = x.shape
    out = x.values.mean(axis=(2, 3))
    return _make(out, (x,), "global_avg_pool", lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape),))


def softmax_cross_entropy(logits: DiffTensor, labels) -> DiffTensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    if logits.values.ndim != 2:
        raise DimensionError("softmax_cross_entropy", "rank", 2, logits.values.ndim)
    n, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise DimensionError("softmax_cross_entropy", "batch", n, labels.shape[0])
    bad = labels[(labels < 0) | (labels >= c)]
    if bad.size:
        raise DimensionError("softmax_cross_entropy", "label", f"[0, {c})", int(bad[0]))

    z = logits.values - logits.values.max(axis=1, keepdims=True)
    ez = np.exp(z)
    total = ez.sum(axis=1)
    log_norm = np.log(total)
    rows = np.arange(n)
    losses = log_norm - z[rows, labels]
    probs = ez / total[:, None]

    def backward(g: np.ndarray):
        grad = probs.copy()
        grad[rows, labels] -= 1.0
        return (grad * (float(g) / n),)

    return _make(np.array(losses.mean()), (logits,), "softmax_cross_entropy", backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax on plain arrays (evaluation only)."""
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


# ───────────────────────────── backward pass ────────────────────────────────
def _topological_order(root: DiffTensor) -> list[DiffTensor]:
    order: list[DiffTensor] = []
    seen: set[int] = set()
    stack: list[tuple[DiffTensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node.op_record is not None:
            for parent in node.op_record.parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss: DiffTensor) -> None:
    """Populate ``grad`` for every ancestor of ``loss`` that requires it.

    Gradients of tensors used more than once are summed. Leaf gradients
    accumulate across graphs until ``zero_grad``; the graph itself is released
    afterwards.
    """
    if loss.values.size != 1:
        raise DimensionError("backward", "loss", "scalar", loss.shape)
    if loss._backward_done:
        raise StaleGraphError("backward already ran on this loss; rebuild the graph with a new forward pass")
    if not loss.requires_grad:
        loss._backward_done = True
        return

    order = _topological_order(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        record = node.op_record
        if record is None:
            continue
        if record.released:
            raise StaleGraphError(f"graph node '{record.op}' was already consumed by an earlier backward pass")
        parent_grads = record.backward(g)
        for parent, pg in zip(record.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg
        record.released = True
    loss._backward_done = True
