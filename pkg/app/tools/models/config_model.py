"""The JSON run configuration read by every CLI subcommand.

Each section is optional and strict: unknown keys are rejected. The validated
tree is echoed under ``config`` in every JSON artifact.
"""

from __future__ import annotations

from typing import (
    List,
    Optional,
)

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
)

from app.tools.models.dataset_model import SyntheticSpec
from app.tools.models.harness_model import TrainConfig
from app.tools.models.network_model import ModelConfig


class PreprocessConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    index_map: Optional[str] = Field(None, description="lip index map file; identity map when omitted")


class StatsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    text_group_size: int = Field(5, ge=1)
    n_texts_used: int = Field(30, ge=1)
    speaker_group_size: int = Field(2, ge=1)
    verify_decomposition: bool = True


class AblationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4], min_length=1)
    with_2d: bool = False


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    synthetic: SyntheticSpec = Field(default_factory=SyntheticSpec)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    preprocess: PreprocessConfig = Field(default_factory=PreprocessConfig)
    stats: StatsConfig = Field(default_factory=StatsConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)

    def echo(self) -> dict:
        return self.model_dump(mode="json")
