"""Adam with bias correction and a step-wise learning-rate decay."""

from __future__ import annotations

from typing import (
    List,
    Optional,
    Sequence,
)

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
)

from app.core.exceptions import (
    ConfigError,
    DimensionError,
)
from app.engine.tensor import DiffTensor


class AdamState(BaseModel):
    """Optimizer hyperparameters plus one moment buffer pair per parameter."""

    model_config = ConfigDict(arbitrary_types_allowed=True, validate_assignment=False)

    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = Field(default=0, ge=0)
    first_moment: List[np.ndarray] = Field(default_factory=list)
    second_moment: List[np.ndarray] = Field(default_factory=list)


def adam_step(params: Sequence[DiffTensor], grads: Sequence[Optional[np.ndarray]], state: AdamState) -> None:
    """Apply one Adam update in place.

    A ``None`` gradient counts as zero. Moment buffers are allocated on the
    first call and must keep tracking the same parameters afterwards.
    """
    if len(params) != len(grads):
        raise DimensionError("adam_step", "params/grads", len(params), len(grads))
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.values) for p in params]
        state.second_moment = [np.zeros_like(p.values) for p in params]
    elif len(state.first_moment) != len(params):
        raise DimensionError("adam_step", "moments", len(state.first_moment), len(params))

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for idx, (param, grad) in enumerate(zip(params, grads)):
        m, v = state.first_moment[idx], state.second_moment[idx]
        if m.shape != param.values.shape:
            raise DimensionError("adam_step", f"moment[{idx}]", param.values.shape, m.shape)
        g = np.zeros_like(param.values) if grad is None else np.asarray(grad, dtype=np.float64)
        if g.shape != param.values.shape:
            raise DimensionError("adam_step", f"grad[{idx}]", param.values.shape, g.shape)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        param.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


def lr_decay(state: AdamState, step: int, every: int, factor: float) -> None:
    """Multiply ``state.lr`` by ``factor`` when ``step`` is a positive multiple of ``every``."""
    if every <= 0:
        raise ConfigError(f"decay interval must be positive, got {every}")
    if not 0.0 < factor <= 1.0:
        raise ConfigError(f"decay factor must lie in (0, 1], got {factor}")
    if step > 0 and step % every == 0:
        state.lr *= factor


class Adam:
    """Thin wrapper binding a parameter list to an ``AdamState``."""

    def __init__(self, params: Sequence[DiffTensor], lr: float = 0.01, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], epsilon=eps)

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
