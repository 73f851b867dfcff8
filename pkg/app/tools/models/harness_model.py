from __future__ import annotations

from enum import Enum
from typing import (
    Any,
    Dict,
    List,
    Optional,
)

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
)

from app.tools.models.network_model import AblationMode


class SplitKind(str, Enum):
    TEXT_INDEPENDENT = "text_independent"
    TEXT_DEPENDENT = "text_dependent"


class FeedbackOptimizer(str, Enum):
    """How theta is updated: inside Adam with the rest, or by its own plain gradient step."""

    ADAM = "adam"
    SGD = "sgd"


class TrainConfig(BaseModel):
    """Optimizer schedule and experiment switches for one training run."""

    model_config = ConfigDict(extra="forbid")

    lr: float = Field(0.003, gt=0)
    batch_size: int = Field(16, ge=1)
    max_steps: int = Field(500, ge=1)
    decay_every: int = Field(300, ge=1)
    decay_factor: float = Field(0.3, gt=0, le=1)
    seed: int = 0
    ablation_mode: AblationMode = AblationMode.RFM_PRIOR
    split_kind: SplitKind = SplitKind.TEXT_INDEPENDENT
    n_train: int = Field(20, ge=1, description="training sentences per speaker")
    feedback_optimizer: FeedbackOptimizer = FeedbackOptimizer.ADAM
    rfm_lr: float = Field(0.01, gt=0, description="step size of theta when feedback_optimizer is sgd")
    log_every: int = Field(50, ge=1)


class RunReport(BaseModel):
    """Outcome of one training run; fully determined by config and seed."""

    mode: AblationMode
    split_kind: SplitKind
    seed: int
    steps: int
    parameter_count: int
    losses: List[float]
    train_accuracy: float = Field(..., ge=0, le=1)
    test_accuracy: Optional[float] = Field(None, ge=0, le=1)
    theta_init: Optional[List[float]] = None
    theta_final: Optional[List[float]] = None
    config: Dict[str, Any] = Field(default_factory=dict)
    wall_time_s: float = Field(0.0, exclude=True)


class SplitScore(BaseModel):
    accuracies: List[float]
    mean: float
    std: float


class AblationRow(BaseModel):
    label: str
    mode: AblationMode
    input_kind: str = "3d"
    scores: Dict[SplitKind, SplitScore]


class AblationTable(BaseModel):
    """Rows in the order baseline, RFM without prior, RFM with opposed prior, RFM with prior."""

    seeds: List[int]
    rows: List[AblationRow]
    ordering_holds: Dict[SplitKind, bool]
    config: Dict[str, Any] = Field(default_factory=dict)
