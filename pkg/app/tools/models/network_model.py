from __future__ import annotations

from enum import Enum
from typing import (
    List,
    Tuple,
)

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    model_validator,
)

from app.engine.tensor import DiffTensor


class AblationMode(str, Enum):
    """Which feedback variant the network is built with."""

    BASELINE = "baseline"
    RFM_ONLY = "rfm_only"
    RFM_PRIOR = "rfm_prior"
    RFM_PRIOR_OPPOSED = "rfm_prior_opposed"

    @property
    def has_feedback(self) -> bool:
        return self is not AblationMode.BASELINE

    @property
    def needs_prior(self) -> bool:
        return self in (AblationMode.RFM_PRIOR, AblationMode.RFM_PRIOR_OPPOSED)


class ModelConfig(BaseModel):
    """Network widths and the ablation switch."""

    model_config = ConfigDict(extra="forbid")

    num_speakers: int = Field(8, ge=1)
    landmark_stream_channels: int = Field(4, gt=0)
    frame_stream_channels: int = Field(4, gt=0)
    backbone_stages: List[Tuple[int, int]] = Field(default_factory=lambda: [(1, 8)])
    fc_dims: List[int] = Field(default_factory=list, description="defaults to [32, num_speakers]")
    input_scale_mm: float = Field(10.0, gt=0, description="millimetres per network input unit")
    ablation_mode: AblationMode = AblationMode.RFM_PRIOR

    @model_validator(mode="after")
    def _check(self) -> "ModelConfig":
        if not self.fc_dims:
            self.fc_dims = [32, self.num_speakers]
        if self.fc_dims[-1] != self.num_speakers:
            raise ValueError(f"fc chain must end at num_speakers={self.num_speakers}, got {self.fc_dims[-1]}")
        if any(d <= 0 for d in self.fc_dims):
            raise ValueError("fc widths must be positive")
        for blocks, width in self.backbone_stages:
            if blocks < 1 or width < 1:
                raise ValueError(f"backbone stage ({blocks}, {width}) needs positive blocks and width")
        return self


class FeedbackVector(BaseModel):
    """The trainable per-landmark gate theta."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    theta: DiffTensor
