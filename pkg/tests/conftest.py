import os

os.environ.setdefault("APP_ENV", "test")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from app.tools.models.dataset_model import (  # noqa: E402
    PoseJitter,
    SyntheticSpec,
)
from app.tools.models.network_model import ModelConfig  # noqa: E402
from app.tools.models.sequence_model import (  # noqa: E402
    N_FRAMES,
    N_LIP_POINTS,
    S3dlmSequence,
)
from app.tools.synthetic import base_lattice  # noqa: E402

NO_POSE = PoseJitter(yaw_deg=0.0, roll_deg=0.0, pitch_deg=0.0, translation_mm=0.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_spec() -> SyntheticSpec:
    """4 speakers x 6 sentences, posed and noisy."""
    return SyntheticSpec(n_speakers=4, n_sentences=6, frames_per_utterance=30, seed=7)


@pytest.fixture
def clean_spec() -> SyntheticSpec:
    """Noiseless and unposed, so the additive structure is exact."""
    return SyntheticSpec(
        n_speakers=4, n_sentences=8, frames_per_utterance=30, noise_sigma=0.0, pose_jitter=NO_POSE, seed=3
    )


def micro_config(num_speakers: int = 2, mode: str = "rfm_prior", channels: int = 2, width: int = 4) -> ModelConfig:
    return ModelConfig(
        num_speakers=num_speakers,
        landmark_stream_channels=channels,
        frame_stream_channels=channels,
        backbone_stages=[(1, width)],
        fc_dims=[8, num_speakers],
        ablation_mode=mode,
    )


def random_sequence(rng: np.random.Generator, speaker_id: int = 0, sentence_id: int = 0, scale: float = 1.0):
    """Resting lattice plus random per-frame motion."""
    tensor = base_lattice()[None] + scale * rng.normal(size=(N_FRAMES, N_LIP_POINTS, 3))
    return S3dlmSequence(tensor=tensor, speaker_id=speaker_id, sentence_id=sentence_id)
