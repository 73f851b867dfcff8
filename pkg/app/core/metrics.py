"""Prometheus metrics for training and preprocessing runs.

Metrics live in a dedicated registry and are flushed to a textfile (node-exporter
style) when ``METRICS_TEXTFILE`` is set. They are diagnostics only and never part
of a run's artifacts.
"""

from prometheus_client import (
    CollectorRegistry,
    Counter,
    Gauge,
    Histogram,
    write_to_textfile,
)

from app.core.config import settings
from app.core.logging import logger

registry = CollectorRegistry()

# Training metrics
training_steps_total = Counter(
    "training_steps_total", "Total number of optimizer steps", ["mode"], registry=registry
)

training_loss = Gauge("training_loss", "Loss at the most recent optimizer step", ["mode"], registry=registry)

training_step_seconds = Histogram(
    "training_step_seconds", "Wall time of one forward/backward/update step", registry=registry
)

# Preprocessing metrics
utterances_processed_total = Counter(
    "utterances_processed_total", "Utterances handled by preprocessing", ["status"], registry=registry
)

posture_correction_angle_radians = Histogram(
    "posture_correction_angle_radians",
    "Absolute rotation angle removed by posture correction",
    ["axis"],
    buckets=(1e-9, 1e-6, 1e-3, 0.01, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 3.2),
    registry=registry,
)


def write_metrics(path: str | None = None) -> str | None:
    """Flush the registry to a Prometheus textfile.

    Args:
        path: Destination; defaults to ``settings.METRICS_TEXTFILE``.

    Returns:
        str | None: The path written, or None when exporting is disabled.
    """
    target = path or settings.METRICS_TEXTFILE
    if not target:
        return None
    write_to_textfile(target, registry)
    logger.debug("metrics_written", path=target)
    return target
