"""Text-independence analysis of lip motion.

Utterance motion variance is grouped once by sentence and once by speaker. If
lip motion mostly carries identity, the spread between speaker groups dwarfs
the spread between text groups. All stds are population stds.
"""

from __future__ import annotations

from typing import (
    List,
    Sequence,
    Tuple,
)

import numpy as np

from app.core.exceptions import (
    ConfigError,
    DatasetValidationError,
    DecompositionError,
)
from app.core.logging import logger
from app.tools.models.dataset_model import (
    Dataset,
    DatasetManifest,
)
from app.tools.models.sequence_model import S3dlmSequence
from app.tools.models.stats_model import (
    GroupAnalysis,
    IndependenceReport,
    MotionVarianceTable,
)
from app.tools.reports import (
    aligned_table,
    csv_text,
    fmt,
)


def utterance_motion_variance(seq: S3dlmSequence) -> float:
    """Mean over landmarks of the temporal variance, summed over xyz."""
    dev = seq.tensor - seq.tensor.mean(axis=0, keepdims=True)
    return float((dev**2).sum(axis=2).mean(axis=0).mean())


def motion_variance_table(sequences: Sequence[S3dlmSequence], manifest: DatasetManifest) -> MotionVarianceTable:
    v = np.full((manifest.n_speakers, manifest.n_sentences), np.nan)
    for seq in sequences:
        v[seq.speaker_id, seq.sentence_id] = utterance_motion_variance(seq)
    missing = np.argwhere(np.isnan(v))
    if len(missing):
        i, j = missing[0]
        raise DatasetValidationError(
            "<sequences>", f"{len(missing)} utterances missing from the variance table, first spk{i}_sent{j}"
        )
    return MotionVarianceTable(v=v)


def _chunks(n: int, size: int) -> List[range]:
    if size < 1:
        raise ConfigError(f"group size must be positive, got {size}")
    return [range(start, min(start + size, n)) for start in range(0, n, size)]


def _deviations(stds: List[float]) -> GroupAnalysis:
    arr = np.asarray(stds)
    dev = arr - arr.mean()
    return GroupAnalysis(std=stds, deviations=dev.tolist(), std_of_deviations=float(dev.std()))


def text_group_analysis(table: MotionVarianceTable, group_size: int = 20, n_texts_used: int = 140) -> GroupAnalysis:
    """std over every speaker's utterances of each block of ``group_size`` sentences."""
    if table.n_sentences < n_texts_used:
        raise ConfigError(f"text grouping uses {n_texts_used} sentences, table has {table.n_sentences}")
    stds = [float(table.v[:, list(g)].std()) for g in _chunks(n_texts_used, group_size)]
    return _deviations(stds)


def speaker_group_analysis(table: MotionVarianceTable, group_size: int = 10) -> GroupAnalysis:
    """std over all sentences of each block of ``group_size`` speakers; the last block holds the remainder."""
    if table.n_speakers < 2:
        raise ConfigError(f"speaker grouping needs at least 2 speakers, got {table.n_speakers}")
    stds = [float(table.v[list(g), :].std()) for g in _chunks(table.n_speakers, group_size)]
    return _deviations(stds)


def independence_report(
    table: MotionVarianceTable,
    text_group_size: int = 20,
    n_texts_used: int = 140,
    speaker_group_size: int = 10,
) -> IndependenceReport:
    text = text_group_analysis(table, text_group_size, n_texts_used)
    speaker = speaker_group_analysis(table, speaker_group_size)
    if text.std_of_deviations > 0:
        ratio = speaker.std_of_deviations / text.std_of_deviations
    else:
        ratio = float("inf") if speaker.std_of_deviations > 0 else 0.0
    report = IndependenceReport(
        std_t=text.std,
        D_t=text.deviations,
        std_of_Dt=text.std_of_deviations,
        std_s=speaker.std,
        D_s=speaker.deviations,
        std_of_Ds=speaker.std_of_deviations,
        ratio=ratio,
    )
    logger.info("independence_report", std_of_Dt=report.std_of_Dt, std_of_Ds=report.std_of_Ds, ratio=ratio)
    return report


def verify_decomposition(ds: Dataset) -> float:
    """Max |f - (L_i - mean L)^2| where f = (speaker mean - grand mean)^2, computed from raw frames."""
    if ds.ground_truth is None or not ds.manifest.has_ground_truth:
        raise DecompositionError("dataset carries no generator ground truth")
    if ds.manifest.pose_applied:
        raise DecompositionError("decomposition needs a dataset generated without pose jitter")
    n_frames = {u.n_frames for u in ds.utterances}
    if len(n_frames) != 1:
        raise DecompositionError(f"utterances differ in length: {sorted(n_frames)}")

    speakers = ds.speakers()
    speaker_means = np.stack(
        [np.mean([u.frames for u in ds.utterances if u.speaker_id == i], axis=0) for i in speakers]
    )
    grand_mean = speaker_means.mean(axis=0)
    f = (speaker_means - grand_mean) ** 2

    l_vectors = np.stack([ds.ground_truth.speaker[i] for i in speakers])
    closed_form = (l_vectors - l_vectors.mean(axis=0)) ** 2
    max_error = float(np.abs(f - closed_form).max())
    logger.info("decomposition_verified", speakers=len(speakers), sentences=len(ds.sentences()), max_error=max_error)
    return max_error


def _rows(label: str, analysis_std: List[float], deviations: List[float]) -> List[Tuple]:
    return [(f"{label} {g + 1}", s, d) for g, (s, d) in enumerate(zip(analysis_std, deviations))]


def render_independence_report(report: IndependenceReport) -> str:
    """Aligned text: a text-based block, a speaker-based block and the ratio."""
    parts = [
        "Utterance motion variance, population std",
        "",
        "Text-based lip motion",
        aligned_table(["sample", "std_t", "D_t"], _rows("texts", report.std_t, report.D_t)),
        f"std(D_t) = {fmt(report.std_of_Dt)}",
        "",
        "Speaker-based lip motion",
        aligned_table(["sample", "std_s", "D_s"], _rows("speakers", report.std_s, report.D_s)),
        f"std(D_s) = {fmt(report.std_of_Ds)}",
        "",
        f"std(D_s) / std(D_t) = {fmt(report.ratio)}",
    ]
    if report.decomposition_max_error is not None:
        parts.append(f"decomposition max error = {fmt(report.decomposition_max_error)}")
    return "\n".join(parts) + "\n"


def independence_csv(report: IndependenceReport) -> str:
    rows: List[Tuple] = [("text", g, s, d) for g, (s, d) in enumerate(zip(report.std_t, report.D_t))]
    rows += [("speaker", g, s, d) for g, (s, d) in enumerate(zip(report.std_s, report.D_s))]
    rows += [
        ("text", "std_of_deviations", report.std_of_Dt, ""),
        ("speaker", "std_of_deviations", report.std_of_Ds, ""),
        ("ratio", "", report.ratio, ""),
    ]
    return csv_text(["block", "group", "std", "deviation"], rows)
