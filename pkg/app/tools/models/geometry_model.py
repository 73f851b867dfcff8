from __future__ import annotations

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_validator,
    model_validator,
)


class FaceCloud(BaseModel):
    """One frame of 3D landmarks in millimetres."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    points: np.ndarray = Field(..., description="(P, 3) float64 coordinates, mm")
    frame_index: int = 0
    corner_left_idx: int
    corner_right_idx: int
    upper_ref_idx: int

    @field_validator("points", mode="before")
    @classmethod
    def _as_points(cls, v):
        arr = np.array(v, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError(f"points must have shape (P, 3), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("points contain non-finite coordinates")
        return arr

    @model_validator(mode="after")
    def _check_designations(self) -> "FaceCloud":
        n = self.points.shape[0]
        idx = (self.corner_left_idx, self.corner_right_idx, self.upper_ref_idx)
        for i in idx:
            if not 0 <= i < n:
                raise ValueError(f"landmark index {i} out of range for {n} points")
        if self.corner_left_idx == self.corner_right_idx:
            raise ValueError("mouth corner indices must be distinct")
        return self

    @property
    def n_points(self) -> int:
        return int(self.points.shape[0])

    def with_points(self, points: np.ndarray) -> "FaceCloud":
        return FaceCloud(
            points=points,
            frame_index=self.frame_index,
            corner_left_idx=self.corner_left_idx,
            corner_right_idx=self.corner_right_idx,
            upper_ref_idx=self.upper_ref_idx,
        )


class RigidTransform(BaseModel):
    """x -> rotation @ x + translation."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    rotation: np.ndarray = Field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = Field(default_factory=lambda: np.zeros(3))

    @field_validator("rotation", mode="before")
    @classmethod
    def _as_rotation(cls, v):
        arr = np.array(v, dtype=np.float64)
        if arr.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {arr.shape}")
        if not np.allclose(arr.T @ arr, np.eye(3), atol=1e-9) or abs(np.linalg.det(arr) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant 1")
        return arr

    @field_validator("translation", mode="before")
    @classmethod
    def _as_translation(cls, v):
        arr = np.array(v, dtype=np.float64).reshape(-1)
        if arr.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got {arr.shape}")
        return arr

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def then(self, other: "RigidTransform") -> "RigidTransform":
        """Composite map: first self, then other."""
        return RigidTransform(
            rotation=other.rotation @ self.rotation,
            translation=other.rotation @ self.translation + other.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rotation=rt, translation=-(rt @ self.translation))


class PoseAngles(BaseModel):
    """Angles (radians) removed by one posture correction."""

    yaw: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0
