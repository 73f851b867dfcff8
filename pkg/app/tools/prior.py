"""Fluctuation prior over lip landmarks.

delta(k) is the mean squared Euclidean deviation of landmark k from its
per-sequence temporal mean, averaged over the training sequences. The prior is
sigmoid(alpha * delta + b) with alpha, b chosen to standardize delta.
"""

from __future__ import annotations

import csv
import io
from typing import (
    Sequence,
    Tuple,
)

import numpy as np

from app.core.exceptions import EmptyInputError
from app.core.logging import logger
from app.engine.tensor import sigmoid_values
from app.tools.models.prior_model import (
    FluctuationStats,
    PriorVector,
)
from app.tools.models.sequence_model import S3dlmSequence


def compute_fluctuation(train: Sequence[S3dlmSequence]) -> np.ndarray:
    """Mean over sequences of (1/28) sum_t ||P_t^k - mean_t P^k||^2, one value per landmark."""
    if not train:
        raise EmptyInputError("fluctuation needs at least one training sequence")
    total = np.zeros(train[0].tensor.shape[1])
    for seq in train:
        dev = seq.tensor - seq.tensor.mean(axis=0, keepdims=True)
        total += (dev**2).sum(axis=2).mean(axis=0)
    return total / len(train)


def fit_prior_params(delta: np.ndarray) -> Tuple[float, float]:
    """alpha = 1/std, b = -mean/std (population std); alpha=1, b=-delta[0] when delta has no spread."""
    delta = np.asarray(delta, dtype=np.float64)
    std = float(delta.std())
    if std <= 1e-12 * max(1.0, float(np.abs(delta).max())):
        logger.info("prior_degenerate_spread", delta_mean=float(delta.mean()))
        return 1.0, -float(delta[0])
    return 1.0 / std, -float(delta.mean()) / std


def compute_prior(delta: np.ndarray, alpha: float, b: float) -> PriorVector:
    return PriorVector(base=sigmoid_values(alpha * np.asarray(delta, dtype=np.float64) + b))


def opposite_prior(prior: PriorVector) -> PriorVector:
    """1 - p, as an exact involution."""
    return PriorVector(base=prior.base, opposed=not prior.opposed)


def fit_prior(train: Sequence[S3dlmSequence]) -> Tuple[FluctuationStats, PriorVector]:
    """compute_fluctuation -> fit_prior_params -> compute_prior on the training split only."""
    delta = compute_fluctuation(train)
    alpha, b = fit_prior_params(delta)
    prior = compute_prior(delta, alpha, b)
    logger.info(
        "prior_fitted",
        sequences=len(train),
        delta_min=float(delta.min()),
        delta_max=float(delta.max()),
        p_min=float(prior.p.min()),
        p_max=float(prior.p.max()),
    )
    return FluctuationStats(delta=delta, alpha=alpha, b=b), prior


def export_prior_csv(delta: np.ndarray, prior: PriorVector) -> str:
    """``landmark_index,delta,p`` rows with round-trippable floats."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["landmark_index", "delta", "p"])
    for k, (d, p) in enumerate(zip(delta, prior.p)):
        writer.writerow([k, repr(float(d)), repr(float(p))])
    return buf.getvalue()
