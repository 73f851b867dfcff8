"""Synthetic lip motion corpus with an additive speaker + text structure.

Each utterance of speaker i reading sentence j is

    frames = base + U_j + L_i + noise, then a random rigid head pose.

The base is a 10 x 20 lattice: rows 0-4 the upper lip from outer to inner,
rows 5-9 the lower lip from inner to outer; columns run from the left corner
(col 0) to the right corner (col 19). Both corners sit at y = z = 0 and mirror
each other in x, and row 0 stays in the z = 0 plane, so an unposed noiseless
utterance is already in the canonical frame.

Randomness comes from one ``numpy.random.SeedSequence(spec.seed)`` spawned into
four streams (text, speaker, noise, pose). Switching noise or pose off leaves
the other draws untouched.
"""

from __future__ import annotations

import math
from typing import (
    Dict,
    Iterator,
    List,
    Tuple,
)

import numpy as np

from app.core.logging import logger
from app.tools.geometry import pose_transform
from app.tools.models.dataset_model import (
    Dataset,
    DatasetManifest,
    GroundTruth,
    SyntheticSpec,
    Utterance,
)
from app.tools.models.sequence_model import (
    LIP_COLS,
    LIP_ROWS,
    N_LIP_POINTS,
)

ROW_DEPTH = np.array([0.0, 1.0, 2.0, 3.0, 4.0, 4.5, 3.5, 2.5, 1.5, 0.5])
ROW_SIGN = np.array([1.0] * 5 + [-1.0] * 5)
# outer rows move more than inner rows
ROW_GAIN = np.array([1.0, 0.8, 0.6, 0.4, 0.25, 0.3, 0.45, 0.6, 0.75, 0.9])
MAX_DEPTH = float(ROW_DEPTH.max())


def _columns() -> Tuple[np.ndarray, np.ndarray]:
    """Arc position (s - 0.5) in [-0.5, 0.5] and the bump sin(pi s), exactly zero at both corners."""
    s = np.arange(LIP_COLS) / (LIP_COLS - 1)
    bump = np.sin(np.pi * s)
    bump[0] = bump[-1] = 0.0
    return s - 0.5, bump


def _grid(values_by_row: np.ndarray, values_by_col: np.ndarray) -> np.ndarray:
    """Outer product flattened row-major to the 200 landmark positions."""
    return np.outer(values_by_row, values_by_col).reshape(N_LIP_POINTS)


def base_lattice(width_mm: float = 50.0) -> np.ndarray:
    """Resting lip shape, (200, 3) in the canonical frame."""
    arc, bump = _columns()
    x = np.outer(1.0 - 0.04 * ROW_DEPTH, arc * width_mm)
    height = np.where(ROW_SIGN > 0, 12.0 - 2.5 * ROW_DEPTH, -(14.0 - 2.5 * ROW_DEPTH))
    y = np.outer(height, bump)
    z = np.outer(-1.5 * ROW_DEPTH, bump)
    return np.stack([x, y, z], axis=-1).reshape(N_LIP_POINTS, 3)


def _sinusoid_bank(rng: np.random.Generator, n: int, amplitude: float, freq_range) -> Tuple[np.ndarray, ...]:
    weights = rng.uniform(0.2, 1.0, size=n)
    amps = amplitude * weights / weights.sum()
    freqs = rng.uniform(freq_range[0], freq_range[1], size=n)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=n)
    return amps, freqs, phases


def _evaluate(bank: Tuple[np.ndarray, ...], t: np.ndarray) -> np.ndarray:
    amps, freqs, phases = bank
    return (amps[None, :] * np.sin(2.0 * math.pi * freqs[None, :] * t[:, None] + phases[None, :])).sum(axis=1)


def text_deformation(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """U_j: mouth opening along y (and z for recessed rows) plus symmetric spread along x, (T, 200, 3)."""
    t = np.arange(spec.frames_per_utterance) / spec.fps
    n, amplitude, freqs = spec.text_components, spec.text_amplitude_mm, spec.text_frequency_range
    opening = _evaluate(_sinusoid_bank(rng, n, amplitude, freqs), t)
    spread = _evaluate(_sinusoid_bank(rng, n, 0.5 * amplitude, freqs), t)
    arc, bump = _columns()
    u = np.zeros((len(t), N_LIP_POINTS, 3))
    u[:, :, 0] = spread[:, None] * _grid(ROW_GAIN, 2.0 * arc)[None, :]
    u[:, :, 1] = opening[:, None] * _grid(ROW_SIGN * ROW_GAIN, bump)[None, :]
    u[:, :, 2] = opening[:, None] * _grid(-0.3 * ROW_DEPTH / MAX_DEPTH * ROW_GAIN, bump)[None, :]
    return u


def speaker_deformation(spec: SyntheticSpec, rng: np.random.Generator) -> Tuple[np.ndarray, Dict[str, float]]:
    """L_i: static width, asymmetry and protrusion offsets plus a habitual oscillation, (T, 200, 3)."""
    factors = {
        "width_scale": float(rng.uniform(*spec.width_scale_range)),
        "asymmetry_mm": float(rng.uniform(*spec.asymmetry_range)),
        "protrusion_mm": float(rng.uniform(*spec.protrusion_range)),
        "amplitude_scale": float(rng.uniform(*spec.speaker_amplitude_scale_range)),
        "habit_frequency_hz": float(rng.uniform(*spec.habit_frequency_range)),
        "habit_phase": float(rng.uniform(0.0, 2.0 * math.pi)),
    }
    t = np.arange(spec.frames_per_utterance) / spec.fps
    arc, bump = _columns()
    base = base_lattice(spec.mouth_width_mm)

    static = np.zeros((N_LIP_POINTS, 3))
    static[:, 0] = (factors["width_scale"] - 1.0) * base[:, 0]
    static[:, 1] = factors["asymmetry_mm"] * _grid(np.ones(LIP_ROWS), 2.0 * arc * bump)
    static[:, 2] = factors["protrusion_mm"] * _grid(ROW_DEPTH / MAX_DEPTH, bump)

    habit = (
        spec.habit_amplitude_mm
        * factors["amplitude_scale"]
        * np.sin(2.0 * math.pi * factors["habit_frequency_hz"] * t + factors["habit_phase"])
    )
    deformation = np.repeat(static[None, :, :], len(t), axis=0)
    deformation[:, :, 1] += habit[:, None] * _grid(ROW_SIGN * ROW_GAIN, bump)[None, :]
    return deformation, factors


def _text_rngs(spec: SyntheticSpec, stream: np.random.SeedSequence) -> List[np.random.Generator]:
    if spec.text_trajectory_seeds is not None:
        return [np.random.default_rng(s) for s in spec.text_trajectory_seeds]
    return [np.random.default_rng(child) for child in stream.spawn(spec.n_sentences)]


def _streams(spec: SyntheticSpec):
    text_ss, speaker_ss, noise_ss, pose_ss = np.random.SeedSequence(spec.seed).spawn(4)
    return text_ss, np.random.default_rng(speaker_ss), np.random.default_rng(noise_ss), np.random.default_rng(pose_ss)


def ground_truth(spec: SyntheticSpec) -> GroundTruth:
    """The base lattice and every U_j and L_i, without generating utterances."""
    text_ss, speaker_rng, _, _ = _streams(spec)
    text = {j: text_deformation(spec, rng) for j, rng in enumerate(_text_rngs(spec, text_ss))}
    speaker = {i: speaker_deformation(spec, speaker_rng)[0] for i in range(spec.n_speakers)}
    return GroundTruth(base=base_lattice(spec.mouth_width_mm), text=text, speaker=speaker)


def iter_synthetic(spec: SyntheticSpec) -> Iterator[Utterance]:
    """Yield utterances in (speaker, sentence) order; identical to ``generate_synthetic(spec).utterances``."""
    text_ss, speaker_rng, noise_rng, pose_rng = _streams(spec)
    base = base_lattice(spec.mouth_width_mm)
    texts = [text_deformation(spec, rng) for rng in _text_rngs(spec, text_ss)]
    jitter = spec.pose_jitter
    shape = (spec.frames_per_utterance, N_LIP_POINTS, 3)

    for i in range(spec.n_speakers):
        speaker, factors = speaker_deformation(spec, speaker_rng)
        logger.debug("synthetic_speaker_drawn", speaker_id=i, **factors)
        for j in range(spec.n_sentences):
            frames = base + texts[j] + speaker
            noise = noise_rng.normal(0.0, spec.noise_sigma, size=shape)
            if spec.noise_sigma > 0:
                frames = frames + noise
            yaw, roll, pitch = np.radians(
                pose_rng.uniform(-1.0, 1.0, size=3) * [jitter.yaw_deg, jitter.roll_deg, jitter.pitch_deg]
            )
            offset = pose_rng.uniform(-jitter.translation_mm, jitter.translation_mm, size=3)
            if not jitter.is_zero:
                frames = pose_transform(yaw, roll, pitch, offset).apply(frames)
            yield Utterance(speaker_id=i, sentence_id=j, frames=frames, fps=spec.fps)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Whole corpus plus the generator's ground truth, fully determined by ``spec.seed``."""
    utterances = list(iter_synthetic(spec))
    manifest = DatasetManifest(
        n_speakers=spec.n_speakers,
        n_sentences=spec.n_sentences,
        fps=spec.fps,
        point_count=N_LIP_POINTS,
        has_ground_truth=True,
        pose_applied=not spec.pose_jitter.is_zero,
        generator=spec,
    )
    logger.info(
        "synthetic_generated",
        speakers=spec.n_speakers,
        sentences=spec.n_sentences,
        frames=spec.frames_per_utterance,
        noise_sigma=spec.noise_sigma,
        seed=spec.seed,
    )
    return Dataset(manifest=manifest, utterances=utterances, ground_truth=ground_truth(spec))
