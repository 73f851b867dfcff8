from __future__ import annotations

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_validator,
)

from app.tools.models.sequence_model import N_LIP_POINTS


class FluctuationStats(BaseModel):
    """Per-landmark fluctuation plus the affine map fed to the sigmoid."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    delta: np.ndarray = Field(..., description="mean squared deviation per landmark, mm^2")
    alpha: float = Field(..., gt=0)
    b: float

    @field_validator("delta", mode="before")
    @classmethod
    def _as_delta(cls, v):
        arr = np.array(v, dtype=np.float64).reshape(-1)
        if np.any(arr < 0):
            raise ValueError("fluctuation must be non-negative")
        return arr


class PriorVector(BaseModel):
    """Per-landmark prior in (0, 1).

    The complement is kept as a flag over the same base values, so taking the
    opposite twice gives back the identical vector.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    base: np.ndarray
    opposed: bool = False

    @field_validator("base", mode="before")
    @classmethod
    def _as_base(cls, v):
        arr = np.array(v, dtype=np.float64).reshape(-1)
        if arr.shape != (N_LIP_POINTS,):
            raise ValueError(f"prior needs {N_LIP_POINTS} values, got {arr.shape[0]}")
        if not np.all((arr > 0.0) & (arr < 1.0)):
            raise ValueError("prior values must lie strictly inside (0, 1)")
        return arr

    @property
    def p(self) -> np.ndarray:
        return 1.0 - self.base if self.opposed else self.base.copy()
