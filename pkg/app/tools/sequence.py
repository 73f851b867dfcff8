"""Sentence-level lip motion sequences.

An utterance becomes a fixed 28 x 200 x 3 tensor: select the 200 lip landmarks,
sample 28 frames uniformly in time (endpoints included, last frame repeated for
short utterances) and stack them frame-major.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import (
    List,
    Sequence,
    Tuple,
)

import numpy as np
from pydantic import ValidationError

from app.core import metrics
from app.core.config import settings
from app.core.exceptions import (
    DegenerateCloudError,
    EmptyInputError,
    IndexMapError,
)
from app.core.logging import logger
from app.tools.geometry import correct_posture_with_angles
from app.tools.models.dataset_model import Utterance
from app.tools.models.geometry_model import (
    FaceCloud,
    PoseAngles,
)
from app.tools.models.sequence_model import (
    N_FRAMES,
    N_LIP_POINTS,
    LipIndexMap,
    S3dlmSequence,
)

_ANGLE_COLUMNS = ("yaw_mean", "roll_mean", "pitch_mean", "yaw_max_abs", "roll_max_abs", "pitch_max_abs")


def _designations() -> dict:
    return {
        "corner_left": settings.CORNER_LEFT_POSITION,
        "corner_right": settings.CORNER_RIGHT_POSITION,
        "upper_ref": settings.UPPER_REF_POSITION,
    }


def identity_lip_index_map() -> LipIndexMap:
    """Map for clouds that already hold the 200 lip points in row order."""
    return LipIndexMap(indices=range(N_LIP_POINTS), **_designations())


def load_lip_index_map(path: str | Path) -> LipIndexMap:
    """Read one integer per line; ``#`` starts a comment."""
    indices: list[int] = []
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                indices.append(int(text))
            except ValueError:
                raise IndexMapError(f"{path} (line {lineno}): not an integer: {text!r}")
    try:
        return LipIndexMap(indices=indices, **_designations())
    except ValidationError as exc:
        raise IndexMapError(f"{path}: {exc.errors()[0]['msg']}")


def select_lip_points(cloud: FaceCloud, index_map: LipIndexMap) -> FaceCloud:
    """Gather the mapped lip landmarks in row-major order."""
    top = max(index_map.indices)
    if top >= cloud.n_points:
        raise IndexMapError(f"lip index {top} out of range for a {cloud.n_points}-point cloud")
    return FaceCloud(
        points=cloud.points[list(index_map.indices)],
        frame_index=cloud.frame_index,
        corner_left_idx=index_map.corner_left,
        corner_right_idx=index_map.corner_right,
        upper_ref_idx=index_map.upper_ref,
    )


def sample_indices(n: int, target: int = N_FRAMES) -> List[int]:
    """Frame indices round(k (n-1) / (target-1)), rounding half up; short inputs repeat the last frame."""
    if n < 1:
        raise EmptyInputError("sample_frames needs at least one frame")
    if n < target:
        return list(range(n)) + [n - 1] * (target - n)
    return [int(math.floor(k * (n - 1) / (target - 1) + 0.5)) for k in range(target)]


def sample_frames(frames: Sequence[FaceCloud], target: int = N_FRAMES) -> List[FaceCloud]:
    return [frames[i] for i in sample_indices(len(frames), target)]


def build_sequence(
    frames: Sequence[FaceCloud],
    index_map: LipIndexMap,
    speaker_id: int,
    sentence_id: int,
) -> S3dlmSequence:
    """Stack the sampled, lip-selected frames into tensor[t, k, :]."""
    sampled = sample_frames(frames)
    tensor = np.stack([select_lip_points(cloud, index_map).points for cloud in sampled])
    return S3dlmSequence(tensor=tensor, speaker_id=speaker_id, sentence_id=sentence_id)


def project_2d(seq: S3dlmSequence) -> S3dlmSequence:
    """Drop depth: the z channel becomes 0, x and y are untouched."""
    tensor = seq.tensor.copy()
    tensor[:, :, 2] = 0.0
    return S3dlmSequence(tensor=tensor, speaker_id=seq.speaker_id, sentence_id=seq.sentence_id)


def sequence_from_frames(
    frames: np.ndarray,
    index_map: LipIndexMap,
    speaker_id: int,
    sentence_id: int,
) -> Tuple[S3dlmSequence, List[PoseAngles]]:
    """Raw (T, P, 3) frames -> posture-corrected S3DLM sequence plus the angles removed per sampled frame.

    Sampling happens first, so only the 28 kept frames are corrected.
    """
    picks = sample_indices(len(frames))
    if max(index_map.indices) >= frames.shape[1]:
        raise IndexMapError(f"lip index {max(index_map.indices)} out of range for a {frames.shape[1]}-point cloud")
    if len(frames) < N_FRAMES:
        logger.warning(
            "utterance_padded",
            speaker_id=speaker_id,
            sentence_id=sentence_id,
            frames=len(frames),
            target=N_FRAMES,
        )
    corrected: list[FaceCloud] = []
    angles: list[PoseAngles] = []
    for i in picks:
        raw = FaceCloud(
            points=frames[i],
            frame_index=i,
            corner_left_idx=index_map.indices[index_map.corner_left],
            corner_right_idx=index_map.indices[index_map.corner_right],
            upper_ref_idx=index_map.indices[index_map.upper_ref],
        )
        lip = select_lip_points(raw, index_map)
        fixed, _, removed = correct_posture_with_angles(lip)
        corrected.append(fixed)
        angles.append(removed)
    tensor = np.stack([c.points for c in corrected])
    seq = S3dlmSequence(tensor=tensor, speaker_id=speaker_id, sentence_id=sentence_id)
    return seq, angles


def preprocess_utterances(
    utterances: Sequence[Utterance],
    index_map: LipIndexMap,
) -> Tuple[List[S3dlmSequence], List[dict]]:
    """Correct and resample every utterance; degenerate ones are logged and skipped.

    Returns the sequences plus one log row per utterance with the mean signed
    and the largest absolute angle removed on each axis.
    """
    sequences: list[S3dlmSequence] = []
    rows: list[dict] = []
    for utt in utterances:
        try:
            seq, angles = sequence_from_frames(utt.frames, index_map, utt.speaker_id, utt.sentence_id)
        except (DegenerateCloudError, IndexMapError) as exc:
            logger.warning(
                "utterance_skipped", speaker_id=utt.speaker_id, sentence_id=utt.sentence_id, reason=str(exc)
            )
            metrics.utterances_processed_total.labels(status="skipped").inc()
            rows.append(
                {
                    "speaker_id": utt.speaker_id,
                    "sentence_id": utt.sentence_id,
                    "status": "skipped",
                    "frames": utt.n_frames,
                    **dict.fromkeys(_ANGLE_COLUMNS, ""),
                }
            )
            continue
        by_axis = {axis: np.array([getattr(a, axis) for a in angles]) for axis in ("yaw", "roll", "pitch")}
        for axis, values in by_axis.items():
            for v in values:
                metrics.posture_correction_angle_radians.labels(axis=axis).observe(abs(v))
        metrics.utterances_processed_total.labels(status="ok").inc()
        sequences.append(seq)
        rows.append(
            {
                "speaker_id": utt.speaker_id,
                "sentence_id": utt.sentence_id,
                "status": "ok",
                "frames": utt.n_frames,
                **{f"{axis}_mean": repr(float(v.mean())) for axis, v in by_axis.items()},
                **{f"{axis}_max_abs": repr(float(np.abs(v).max())) for axis, v in by_axis.items()},
            }
        )
    skipped = sum(r["status"] == "skipped" for r in rows)
    logger.info("utterances_preprocessed", ok=len(sequences), skipped=skipped)
    return sequences, rows
