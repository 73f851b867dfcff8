from __future__ import annotations

from typing import (
    Dict,
    List,
    Optional,
    Tuple,
)

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_validator,
    model_validator,
)

FORMAT_VERSION = 1


def _check_range(name: str, lo_hi: Tuple[float, float], lower: Optional[float] = None) -> None:
    lo, hi = lo_hi
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValueError(f"{name} must be finite, got {lo_hi}")
    if lo > hi:
        raise ValueError(f"{name} is inverted: {lo_hi}")
    if lower is not None and lo < lower:
        raise ValueError(f"{name} must stay >= {lower}, got {lo_hi}")


class Utterance(BaseModel):
    """Raw frames of one (speaker, sentence) recording."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    speaker_id: int = Field(..., ge=0)
    sentence_id: int = Field(..., ge=0)
    frames: np.ndarray = Field(..., description="(T, P, 3) float64, time-ordered, mm")
    fps: float = Field(30.0, gt=0)

    @field_validator("frames", mode="before")
    @classmethod
    def _as_frames(cls, v):
        arr = np.array(v, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"frames must have shape (T, P, 3), got {arr.shape}")
        if arr.shape[0] < 1:
            raise ValueError("an utterance needs at least one frame")
        return arr

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def point_count(self) -> int:
        return int(self.frames.shape[1])


class PoseJitter(BaseModel):
    """Bounds of the random head pose applied to each synthetic utterance."""

    model_config = ConfigDict(extra="forbid")

    yaw_deg: float = Field(10.0, ge=0, le=89)
    roll_deg: float = Field(10.0, ge=0, le=89)
    pitch_deg: float = Field(10.0, ge=0, le=89)
    translation_mm: float = Field(50.0, ge=0)

    @property
    def is_zero(self) -> bool:
        return self.yaw_deg == self.roll_deg == self.pitch_deg == self.translation_mm == 0.0


class SyntheticSpec(BaseModel):
    """Generator settings for the additive speaker + text lip motion corpus.

    Every utterance is ``base + U_j + L_i + noise`` followed by a rigid pose:
    ``U_j`` is driven by a sinusoid bank shared by every speaker reading
    sentence j, ``L_i`` bundles the speaker's width, corner asymmetry,
    protrusion and habitual oscillation.
    """

    model_config = ConfigDict(extra="forbid")

    n_speakers: int = Field(8, ge=1)
    n_sentences: int = Field(30, ge=1)
    frames_per_utterance: int = Field(40, ge=1)
    fps: float = Field(30.0, gt=0)
    noise_sigma: float = Field(0.05, ge=0, description="mm")

    mouth_width_mm: float = Field(50.0, gt=0)
    text_components: int = Field(3, ge=1, description="sinusoids per text trajectory")
    text_amplitude_mm: float = Field(2.0, ge=0)
    text_frequency_range: Tuple[float, float] = (0.5, 3.0)
    text_trajectory_seeds: Optional[List[int]] = Field(
        None, description="one seed per sentence; drawn from the main seed when omitted"
    )

    speaker_amplitude_scale_range: Tuple[float, float] = (0.5, 3.0)
    habit_amplitude_mm: float = Field(1.5, ge=0)
    habit_frequency_range: Tuple[float, float] = (0.6, 1.8)
    width_scale_range: Tuple[float, float] = (0.85, 1.15)
    asymmetry_range: Tuple[float, float] = (-1.5, 1.5)
    protrusion_range: Tuple[float, float] = (0.0, 3.0)

    pose_jitter: PoseJitter = Field(default_factory=PoseJitter)
    seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> "SyntheticSpec":
        _check_range("text_frequency_range", self.text_frequency_range, lower=0.0)
        _check_range("speaker_amplitude_scale_range", self.speaker_amplitude_scale_range, lower=0.0)
        _check_range("habit_frequency_range", self.habit_frequency_range, lower=0.0)
        _check_range("width_scale_range", self.width_scale_range, lower=0.0)
        _check_range("asymmetry_range", self.asymmetry_range)
        _check_range("protrusion_range", self.protrusion_range)
        if self.text_trajectory_seeds is not None and len(self.text_trajectory_seeds) != self.n_sentences:
            raise ValueError(
                f"text_trajectory_seeds needs {self.n_sentences} entries, got {len(self.text_trajectory_seeds)}"
            )
        return self


class DatasetManifest(BaseModel):
    """Contents of ``manifest.json``."""

    model_config = ConfigDict(extra="forbid")

    format_version: int = FORMAT_VERSION
    n_speakers: int = Field(..., ge=1)
    n_sentences: int = Field(..., ge=1)
    fps: float = Field(..., gt=0)
    point_count: int = Field(..., ge=1)
    has_ground_truth: bool = False
    pose_applied: bool = True
    generator: Optional[SyntheticSpec] = None


class GroundTruth(BaseModel):
    """Deformations the generator summed, (T, 200, 3) each; ``base`` is (200, 3)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    base: np.ndarray
    text: Dict[int, np.ndarray]
    speaker: Dict[int, np.ndarray]


class Dataset(BaseModel):
    """Manifest plus utterances ordered by (speaker, sentence)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    manifest: DatasetManifest
    utterances: List[Utterance]
    ground_truth: Optional[GroundTruth] = None

    def utterance(self, speaker_id: int, sentence_id: int) -> Utterance:
        for utt in self.utterances:
            if utt.speaker_id == speaker_id and utt.sentence_id == sentence_id:
                return utt
        raise KeyError((speaker_id, sentence_id))

    def speakers(self) -> List[int]:
        return sorted({u.speaker_id for u in self.utterances})

    def sentences(self) -> List[int]:
        return sorted({u.sentence_id for u in self.utterances})
