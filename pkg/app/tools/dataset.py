"""On-disk dataset format, loading and train/test splits.

A dataset directory holds ``manifest.json`` (UTF-8, sorted keys) and one file
per utterance named ``spk{S}_sent{J}.s3d``: magic ``S3D1``, u32 frame count,
u32 point count, then little-endian float64 xyz triples frame-major. A
``spk{S}_sent{J}.csv`` file with a ``frame,point,x,y,z`` header is accepted in
place of the binary one. Generator ground truth, when present, lives in
``ground_truth/`` with the same codec.

Preprocessed S3DLM stores reuse the layout: 28 x 200 records plus
``preprocess_log.csv``.
"""

from __future__ import annotations

import asyncio
import csv
import json
import re
import struct
from pathlib import Path
from typing import (
    Dict,
    List,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np
from pydantic import ValidationError

from app.core.config import settings
from app.core.exceptions import (
    ConfigError,
    DatasetFormatError,
    DatasetValidationError,
)
from app.core.logging import logger
from app.tools.models.dataset_model import (
    FORMAT_VERSION,
    Dataset,
    DatasetManifest,
    GroundTruth,
    Utterance,
)
from app.tools.models.sequence_model import S3dlmSequence

MAGIC = b"S3D1"
HEADER = struct.Struct("<4sII")
MANIFEST = "manifest.json"
GROUND_TRUTH_DIR = "ground_truth"
PREPROCESS_LOG = "preprocess_log.csv"
_NAME = re.compile(r"^spk(\d+)_sent(\d+)\.(s3d|csv)$")


# ───────────────────────────── codec ──────────────────────────────────────
def encode_frames(frames: np.ndarray) -> bytes:
    frames = np.asarray(frames, dtype=np.float64)
    return HEADER.pack(MAGIC, frames.shape[0], frames.shape[1]) + frames.astype("<f8").tobytes()


def decode_frames(blob: bytes, path: str | Path) -> np.ndarray:
    if len(blob) < HEADER.size:
        raise DatasetFormatError(path, "file shorter than the S3D1 header", offset=len(blob))
    magic, n_frames, n_points = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DatasetFormatError(path, f"bad magic {magic!r}", offset=0)
    expected = HEADER.size + n_frames * n_points * 3 * 8
    if len(blob) != expected:
        raise DatasetFormatError(
            path, f"expected {expected} bytes for {n_frames} x {n_points} points, found {len(blob)}", offset=len(blob)
        )
    if n_frames < 1:
        raise DatasetFormatError(path, "zero frames", offset=4)
    return np.frombuffer(blob, dtype="<f8", offset=HEADER.size).astype(np.float64).reshape(n_frames, n_points, 3)


def read_csv_frames(path: str | Path) -> np.ndarray:
    """Parse the ``frame,point,x,y,z`` form; rows may come in any order but must cover the full grid."""
    rows: Dict[Tuple[int, int], Tuple[float, float, float]] = {}
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["frame", "point", "x", "y", "z"]:
            raise DatasetFormatError(path, "expected header frame,point,x,y,z", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise DatasetFormatError(path, f"expected 5 fields, got {len(row)}", line=lineno)
            try:
                key = (int(row[0]), int(row[1]))
                xyz = (float(row[2]), float(row[3]), float(row[4]))
            except ValueError as exc:
                raise DatasetFormatError(path, str(exc), line=lineno)
            if key in rows:
                raise DatasetFormatError(path, f"duplicate frame/point {key}", line=lineno)
            rows[key] = xyz
    if not rows:
        raise DatasetFormatError(path, "no data rows", line=2)
    n_frames = max(k[0] for k in rows) + 1
    n_points = max(k[1] for k in rows) + 1
    if len(rows) != n_frames * n_points or min(min(k) for k in rows) < 0:
        raise DatasetFormatError(path, f"rows do not cover a {n_frames} x {n_points} grid")
    frames = np.empty((n_frames, n_points, 3))
    for (t, k), xyz in rows.items():
        frames[t, k] = xyz
    return frames


def read_frames(path: Path) -> np.ndarray:
    if path.suffix == ".csv":
        return read_csv_frames(path)
    return decode_frames(path.read_bytes(), path)


def utterance_filename(speaker_id: int, sentence_id: int, suffix: str = ".s3d") -> str:
    return f"spk{speaker_id}_sent{sentence_id}{suffix}"


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# ───────────────────────────── save / load ────────────────────────────────
def save_dataset(ds: Dataset, path: str | Path) -> Path:
    """Write the manifest, one file per utterance and the optional ground truth."""
    root = Path(path)
    if not root.parent.exists():
        raise ConfigError(f"output parent directory does not exist: {root.parent}")
    root.mkdir(exist_ok=True)
    _write_json(root / MANIFEST, ds.manifest.model_dump(mode="json"))
    for utt in ds.utterances:
        (root / utterance_filename(utt.speaker_id, utt.sentence_id)).write_bytes(encode_frames(utt.frames))
    if ds.ground_truth is not None:
        gt_dir = root / GROUND_TRUTH_DIR
        gt_dir.mkdir(exist_ok=True)
        (gt_dir / "base.s3d").write_bytes(encode_frames(ds.ground_truth.base[None]))
        for j, u in sorted(ds.ground_truth.text.items()):
            (gt_dir / f"text_{j}.s3d").write_bytes(encode_frames(u))
        for i, lvec in sorted(ds.ground_truth.speaker.items()):
            (gt_dir / f"speaker_{i}.s3d").write_bytes(encode_frames(lvec))
    logger.info("dataset_saved", path=str(root), utterances=len(ds.utterances))
    return root


def read_manifest(root: Path) -> DatasetManifest:
    path = root / MANIFEST
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DatasetFormatError(path, "manifest not found")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(path, exc.msg, line=exc.lineno)
    if isinstance(payload, dict) and payload.get("format_version") != FORMAT_VERSION:
        raise DatasetFormatError(path, f"unsupported format_version {payload.get('format_version')!r}")
    try:
        return DatasetManifest.model_validate(payload)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise DatasetFormatError(path, f"{'.'.join(map(str, err['loc']))}: {err['msg']}")


def _locate(root: Path, speaker_id: int, sentence_id: int) -> Path:
    for suffix in (".s3d", ".csv"):
        candidate = root / utterance_filename(speaker_id, sentence_id, suffix)
        if candidate.exists():
            return candidate
    raise DatasetValidationError(root / utterance_filename(speaker_id, sentence_id), "listed in manifest but missing")


async def _load_all(paths: Sequence[Path]) -> List[np.ndarray]:
    semaphore = asyncio.Semaphore(max(1, settings.LOAD_CONCURRENCY))

    async def _guard(path: Path):
        async with semaphore:
            return await asyncio.to_thread(read_frames, path)

    return await asyncio.gather(*[_guard(p) for p in paths])


def _load_ground_truth(root: Path, manifest: DatasetManifest) -> Optional[GroundTruth]:
    if not manifest.has_ground_truth:
        return None
    gt_dir = root / GROUND_TRUTH_DIR
    try:
        base = read_frames(gt_dir / "base.s3d")[0]
        text = {j: read_frames(gt_dir / f"text_{j}.s3d") for j in range(manifest.n_sentences)}
        speaker = {i: read_frames(gt_dir / f"speaker_{i}.s3d") for i in range(manifest.n_speakers)}
    except FileNotFoundError as exc:
        raise DatasetValidationError(exc.filename, "ground truth declared in manifest but missing")
    return GroundTruth(base=base, text=text, speaker=speaker)


def load_dataset(path: str | Path) -> Dataset:
    """Read a dataset directory; files are loaded concurrently, assembled in (speaker, sentence) order."""
    root = Path(path)
    manifest = read_manifest(root)
    keys = [(i, j) for i in range(manifest.n_speakers) for j in range(manifest.n_sentences)]
    paths = [_locate(root, i, j) for i, j in keys]
    frames = asyncio.run(_load_all(paths))

    utterances = []
    for (i, j), file, arr in zip(keys, paths, frames):
        if arr.shape[1] != manifest.point_count:
            raise DatasetValidationError(
                file, f"has {arr.shape[1]} points per frame, manifest says {manifest.point_count}"
            )
        utterances.append(Utterance(speaker_id=i, sentence_id=j, frames=arr, fps=manifest.fps))
    logger.info("dataset_loaded", path=str(root), utterances=len(utterances))
    return Dataset(manifest=manifest, utterances=utterances, ground_truth=_load_ground_truth(root, manifest))


# ───────────────────────────── splits ─────────────────────────────────────
def _check_split(n_sentences: int, n_train: int) -> None:
    if n_train < 1 or n_train >= n_sentences:
        raise ConfigError(f"n_train must lie in [1, {n_sentences}), got {n_train}")


def partition_text_independent(items: Sequence, n_sentences: int, n_train: int) -> Tuple[List, List]:
    """Anything carrying ``sentence_id``: sentences [0, n_train) train, the rest test."""
    _check_split(n_sentences, n_train)
    return [u for u in items if u.sentence_id < n_train], [u for u in items if u.sentence_id >= n_train]


def partition_text_dependent(
    items: Sequence, n_speakers: int, n_sentences: int, seed: int, n_train: int
) -> Tuple[List, List]:
    """One seeded permutation per speaker, drawn in speaker order; its first n_train sentences train."""
    _check_split(n_sentences, n_train)
    rng = np.random.default_rng(seed)
    chosen = {i: set(int(j) for j in rng.permutation(n_sentences)[:n_train]) for i in range(n_speakers)}
    train = [u for u in items if u.sentence_id in chosen[u.speaker_id]]
    test = [u for u in items if u.sentence_id not in chosen[u.speaker_id]]
    return train, test


def split_text_independent(ds: Dataset, n_train: int = 120) -> Tuple[List[Utterance], List[Utterance]]:
    return partition_text_independent(ds.utterances, ds.manifest.n_sentences, n_train)


def split_text_dependent(ds: Dataset, seed: int, n_train: int = 120) -> Tuple[List[Utterance], List[Utterance]]:
    """Each speaker gets its own random choice of n_train sentences."""
    return partition_text_dependent(ds.utterances, ds.manifest.n_speakers, ds.manifest.n_sentences, seed, n_train)


# ───────────────────────────── S3DLM store ────────────────────────────────
def save_sequence_store(
    sequences: Sequence[S3dlmSequence],
    path: str | Path,
    log_rows: Sequence[dict] = (),
    extra: Optional[dict] = None,
) -> Path:
    """Write corrected sequences, a store manifest and the preprocessing log."""
    root = Path(path)
    if not root.parent.exists():
        raise ConfigError(f"output parent directory does not exist: {root.parent}")
    root.mkdir(exist_ok=True)
    _write_json(
        root / MANIFEST,
        {
            "format_version": FORMAT_VERSION,
            "kind": "s3dlm_store",
            "sequences": len(sequences),
            **(extra or {}),
        },
    )
    for seq in sequences:
        (root / utterance_filename(seq.speaker_id, seq.sentence_id)).write_bytes(encode_frames(seq.tensor))
    if log_rows:
        with open(root / PREPROCESS_LOG, "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(log_rows[0].keys()), lineterminator="\n")
            writer.writeheader()
            writer.writerows(log_rows)
    logger.info("sequence_store_saved", path=str(root), sequences=len(sequences))
    return root


def is_sequence_store(path: str | Path) -> bool:
    try:
        payload = json.loads((Path(path) / MANIFEST).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return False
    return isinstance(payload, dict) and payload.get("kind") == "s3dlm_store"


def load_sequence_store(path: str | Path) -> List[S3dlmSequence]:
    """Every ``spk{S}_sent{J}.s3d`` record of a store, ordered by (speaker, sentence)."""
    root = Path(path)
    if not is_sequence_store(root):
        raise DatasetFormatError(root / MANIFEST, "not an S3DLM store manifest")
    found = []
    for file in root.iterdir():
        match = _NAME.match(file.name)
        if match and match.group(3) == "s3d":
            found.append((int(match.group(1)), int(match.group(2)), file))
    sequences = []
    for speaker_id, sentence_id, file in sorted(found):
        try:
            seq = S3dlmSequence(tensor=read_frames(file), speaker_id=speaker_id, sentence_id=sentence_id)
        except ValidationError as exc:
            raise DatasetValidationError(file, exc.errors()[0]["msg"])
        sequences.append(seq)
    logger.info("sequence_store_loaded", path=str(root), sequences=len(sequences))
    return sequences


def load_store_manifest(path: str | Path) -> DatasetManifest:
    """Manifest of the dataset a store was preprocessed from."""
    manifest_path = Path(path) / MANIFEST
    if not is_sequence_store(path):
        raise DatasetFormatError(manifest_path, "not an S3DLM store manifest")
    payload = json.loads(manifest_path.read_text(encoding="utf-8"))
    try:
        return DatasetManifest.model_validate(payload["dataset"])
    except (KeyError, ValidationError):
        raise DatasetFormatError(manifest_path, "store manifest lacks a valid 'dataset' section")
