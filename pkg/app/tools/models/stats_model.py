from __future__ import annotations

from typing import List

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_validator,
)


class MotionVarianceTable(BaseModel):
    """v[i, j]: motion variance (mm^2) of speaker i reading sentence j."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    v: np.ndarray

    @field_validator("v", mode="before")
    @classmethod
    def _as_table(cls, v):
        arr = np.array(v, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"variance table must be 2-D, got shape {arr.shape}")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError("variances must be finite and non-negative")
        return arr

    @property
    def n_speakers(self) -> int:
        return int(self.v.shape[0])

    @property
    def n_sentences(self) -> int:
        return int(self.v.shape[1])


class GroupAnalysis(BaseModel):
    """Per-group stds, their deviations from the mean and the std of those deviations."""

    std: List[float]
    deviations: List[float]
    std_of_deviations: float = Field(..., ge=0)


class IndependenceReport(BaseModel):
    """Text-based against speaker-based spread of utterance motion variance (population stds)."""

    std_t: List[float]
    D_t: List[float]
    std_of_Dt: float
    std_s: List[float]
    D_s: List[float]
    std_of_Ds: float
    ratio: float = Field(..., description="std_of_Ds / std_of_Dt; inf when the text spread is exactly zero")
    decomposition_max_error: float | None = None
