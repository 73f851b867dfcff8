import numpy as np
import pytest
from pydantic import ValidationError
from structlog.testing import capture_logs

from app.core.exceptions import (
    EmptyInputError,
    IndexMapError,
)
from app.tools.geometry import pose_transform
from app.tools.models.dataset_model import Utterance
from app.tools.models.geometry_model import FaceCloud
from app.tools.models.sequence_model import (
    N_FRAMES,
    N_LIP_POINTS,
    LipIndexMap,
    S3dlmSequence,
)
from app.tools.sequence import (
    build_sequence,
    identity_lip_index_map,
    load_lip_index_map,
    preprocess_utterances,
    project_2d,
    sample_frames,
    sample_indices,
    select_lip_points,
    sequence_from_frames,
)
from app.tools.synthetic import base_lattice
from tests.conftest import random_sequence


def face(points, frame_index=0) -> FaceCloud:
    return FaceCloud(points=points, frame_index=frame_index, corner_left_idx=0, corner_right_idx=1, upper_ref_idx=2)


def moving_lips(rng, n_frames: int, scale: float = 0.5) -> np.ndarray:
    return base_lattice()[None] + scale * rng.normal(size=(n_frames, N_LIP_POINTS, 3))


# ─── index map ───
def test_select_matches_naive_gather(rng):
    indices = rng.choice(1347, size=N_LIP_POINTS, replace=False)
    index_map = LipIndexMap(indices=indices)
    raw = face(rng.normal(size=(1347, 3)))
    lips = select_lip_points(raw, index_map)
    expected = np.array([raw.points[i] for i in indices])
    np.testing.assert_array_equal(lips.points, expected)
    assert lips.n_points == N_LIP_POINTS
    assert (lips.corner_left_idx, lips.corner_right_idx, lips.upper_ref_idx) == (0, 19, 9)


def test_index_map_rejects_duplicates():
    with pytest.raises(ValidationError):
        LipIndexMap(indices=[0] * N_LIP_POINTS)


def test_index_map_rejects_wrong_length():
    with pytest.raises(ValidationError):
        LipIndexMap(indices=range(199))


def test_select_rejects_small_cloud(rng):
    index_map = LipIndexMap(indices=range(100, 300))
    with pytest.raises(IndexMapError):
        select_lip_points(face(rng.normal(size=(250, 3))), index_map)


def test_load_index_map_with_comments(tmp_path):
    path = tmp_path / "map.txt"
    lines = ["# lip rows, outer upper first"] + [f"{400 + i}  # point {i}" for i in range(N_LIP_POINTS)] + [""]
    path.write_text("\n".join(lines), encoding="utf-8")
    index_map = load_lip_index_map(path)
    assert index_map.indices[0] == 400
    assert index_map.indices[-1] == 599


def test_load_index_map_reports_line(tmp_path):
    path = tmp_path / "map.txt"
    path.write_text("1\n2\nthree\n", encoding="utf-8")
    with pytest.raises(IndexMapError, match="line 3"):
        load_lip_index_map(path)


def test_load_index_map_wrong_count(tmp_path):
    path = tmp_path / "map.txt"
    path.write_text("\n".join(str(i) for i in range(10)), encoding="utf-8")
    with pytest.raises(IndexMapError, match="200"):
        load_lip_index_map(path)


# ─── sampling ───
def test_sample_identity_for_exact_length():
    assert sample_indices(28) == list(range(28))


def test_sample_pads_single_frame():
    assert sample_indices(1) == [0] * 28


def test_sample_55_frames():
    assert sample_indices(55) == list(range(0, 55, 2))


@pytest.mark.parametrize("n", [2, 27, 29, 40, 100, 1001])
def test_sample_formula(n):
    picks = sample_indices(n)
    expected = [int(np.floor(k * (n - 1) / 27 + 0.5)) if n >= 28 else min(k, n - 1) for k in range(28)]
    assert picks == expected
    assert len(picks) == N_FRAMES
    assert picks == sorted(picks)
    assert picks[0] == 0 and picks[-1] == n - 1


def test_sample_empty():
    with pytest.raises(EmptyInputError):
        sample_indices(0)


def test_sample_frames_returns_clouds(rng):
    frames = [face(rng.normal(size=(3, 3)), i) for i in range(10)]
    picked = sample_frames(frames)
    assert len(picked) == 28
    assert [c.frame_index for c in picked[-19:]] == [9] * 19


# ─── sequence assembly ───
def test_static_lips_give_identical_slices():
    still = base_lattice()
    frames = [FaceCloud(points=still, corner_left_idx=0, corner_right_idx=19, upper_ref_idx=9)] * 5
    seq = build_sequence(frames, identity_lip_index_map(), 0, 0)
    assert seq.tensor.shape == (N_FRAMES, N_LIP_POINTS, 3)
    assert all(np.array_equal(seq.tensor[t], still) for t in range(N_FRAMES))


def test_one_moving_landmark():
    clouds = []
    for t in range(28):
        pts = base_lattice()
        pts[57, 0] += np.sin(t)
        clouds.append(FaceCloud(points=pts, corner_left_idx=0, corner_right_idx=19, upper_ref_idx=9))
    seq = build_sequence(clouds, identity_lip_index_map(), 0, 0)
    varying = np.flatnonzero(seq.tensor.std(axis=0).sum(axis=1) > 1e-12)
    assert varying.tolist() == [57]


def test_tensor_layout(rng):
    seq = random_sequence(rng)
    flat = seq.tensor.reshape(-1)
    for t, k, c in [(0, 0, 0), (3, 17, 2), (27, 199, 1), (12, 100, 0)]:
        assert flat[t * 600 + k * 3 + c] == seq.tensor[t, k, c]
    assert seq.network_input().shape == (3, N_FRAMES, N_LIP_POINTS)
    assert seq.network_input()[2, 3, 17] == seq.tensor[3, 17, 2]


def test_sequence_rejects_wrong_shape():
    with pytest.raises(ValidationError):
        S3dlmSequence(tensor=np.zeros((27, N_LIP_POINTS, 3)), speaker_id=0, sentence_id=0)


def test_project_2d(rng):
    seq = random_sequence(rng)
    flat = project_2d(seq)
    assert not flat.tensor[:, :, 2].any()
    np.testing.assert_array_equal(flat.tensor[:, :, :2], seq.tensor[:, :, :2])
    again = project_2d(flat)
    np.testing.assert_array_equal(again.tensor, flat.tensor)


# ─── raw frames to corrected sequences ───
def test_sequence_from_frames_is_pose_invariant(rng):
    frames = moving_lips(rng, 40)
    reference, _ = sequence_from_frames(frames, identity_lip_index_map(), 1, 2)
    posed = np.stack(
        [pose_transform(*rng.uniform(-0.25, 0.25, size=3), rng.uniform(-100, 100, size=3)).apply(f) for f in frames]
    )
    moved, angles = sequence_from_frames(posed, identity_lip_index_map(), 1, 2)
    np.testing.assert_allclose(moved.tensor, reference.tensor, atol=1e-9)
    assert len(angles) == N_FRAMES
    assert (moved.speaker_id, moved.sentence_id) == (1, 2)


def test_sequence_from_frames_with_face_cloud(rng):
    lips = moving_lips(rng, 30)
    raw = rng.normal(scale=50.0, size=(30, 600, 3))
    raw[:, 300:500] = lips
    index_map = LipIndexMap(indices=range(300, 500))
    seq, _ = sequence_from_frames(raw, index_map, 0, 0)
    expected, _ = sequence_from_frames(lips, identity_lip_index_map(), 0, 0)
    np.testing.assert_allclose(seq.tensor, expected.tensor, atol=1e-12)


def test_sequence_from_frames_rejects_small_cloud(rng):
    with pytest.raises(IndexMapError):
        sequence_from_frames(rng.normal(size=(5, 150, 3)), identity_lip_index_map(), 0, 0)


def test_short_utterance_is_padded_with_warning(rng):
    with capture_logs() as logs:
        seq, _ = sequence_from_frames(moving_lips(rng, 1), identity_lip_index_map(), 0, 0)
    assert all(np.array_equal(seq.tensor[0], seq.tensor[t]) for t in range(N_FRAMES))
    assert any(entry["event"] == "utterance_padded" and entry["log_level"] == "warning" for entry in logs)


def test_preprocess_skips_degenerate_utterances(rng):
    good = Utterance(speaker_id=0, sentence_id=0, frames=moving_lips(rng, 30))
    collapsed = np.zeros((30, N_LIP_POINTS, 3))
    bad = Utterance(speaker_id=0, sentence_id=1, frames=collapsed)
    with capture_logs() as logs:
        sequences, rows = preprocess_utterances([good, bad], identity_lip_index_map())
    assert [s.sentence_id for s in sequences] == [0]
    assert [r["status"] for r in rows] == ["ok", "skipped"]
    assert rows[1]["yaw_mean"] == ""
    assert float(rows[0]["yaw_max_abs"]) >= 0.0
    assert any(entry["event"] == "utterance_skipped" for entry in logs)


def test_preprocess_reports_removed_angles(rng):
    frames = np.stack([pose_transform(0.2, 0.0, 0.0).apply(base_lattice()) for _ in range(28)])
    _, rows = preprocess_utterances([Utterance(speaker_id=0, sentence_id=0, frames=frames)], identity_lip_index_map())
    assert float(rows[0]["yaw_mean"]) == pytest.approx(-0.2, abs=1e-12)
    assert float(rows[0]["roll_max_abs"]) < 1e-12
    assert float(rows[0]["pitch_max_abs"]) < 1e-12
