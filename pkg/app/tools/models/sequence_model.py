from __future__ import annotations

from typing import Tuple

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_validator,
    model_validator,
)

LIP_ROWS = 10
LIP_COLS = 20
N_LIP_POINTS = LIP_ROWS * LIP_COLS
N_FRAMES = 28


class LipIndexMap(BaseModel):
    """200 face-cloud indices in row-major lip order (row r, column c -> 20r + c)."""

    model_config = ConfigDict(frozen=True)

    indices: Tuple[int, ...]
    corner_left: int = Field(0, description="position inside the 200-point lip grid")
    corner_right: int = 19
    upper_ref: int = 9

    @field_validator("indices", mode="before")
    @classmethod
    def _as_indices(cls, v):
        return tuple(int(i) for i in v)

    @model_validator(mode="after")
    def _check(self) -> "LipIndexMap":
        if len(self.indices) != N_LIP_POINTS:
            raise ValueError(f"lip index map needs exactly {N_LIP_POINTS} indices, got {len(self.indices)}")
        if len(set(self.indices)) != N_LIP_POINTS:
            raise ValueError("lip index map contains duplicate indices")
        if min(self.indices) < 0:
            raise ValueError("lip index map contains negative indices")
        for pos in (self.corner_left, self.corner_right, self.upper_ref):
            if not 0 <= pos < N_LIP_POINTS:
                raise ValueError(f"designated position {pos} outside the lip grid")
        if self.corner_left == self.corner_right:
            raise ValueError("corner designations must differ")
        return self


class S3dlmSequence(BaseModel):
    """28 frames x 200 lip landmarks x xyz (mm) for one utterance."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    tensor: np.ndarray
    speaker_id: int
    sentence_id: int

    @field_validator("tensor", mode="before")
    @classmethod
    def _as_tensor(cls, v):
        arr = np.array(v, dtype=np.float64)
        if arr.shape != (N_FRAMES, N_LIP_POINTS, 3):
            raise ValueError(f"sequence tensor must be {(N_FRAMES, N_LIP_POINTS, 3)}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("sequence tensor contains non-finite values")
        return arr

    def network_input(self) -> np.ndarray:
        """[3, frames, landmarks] layout used by the network."""
        return np.ascontiguousarray(self.tensor.transpose(2, 0, 1))
