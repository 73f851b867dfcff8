"""Error hierarchy for the toolkit.

Every error raised on purpose derives from ``LipMotionError`` so the CLI can map
it onto an exit code. Most also subclass the matching builtin, so callers that
only care about ``ValueError`` keep working.
"""

from typing import Optional


class LipMotionError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(LipMotionError, ValueError):
    """Tensor shapes disagree on a named axis."""

    def __init__(self, op: str, axis: str, expected, got):
        self.op = op
        self.axis = axis
        self.expected = expected
        self.got = got
        super().__init__(f"{op}: dimension mismatch on axis '{axis}' (expected {expected}, got {got})")


class StaleGraphError(LipMotionError, RuntimeError):
    """A computation graph was reused after its backward pass."""


class DegenerateCloudError(LipMotionError, ValueError):
    """Landmarks needed to define a frame of reference coincide."""


class IndexMapError(LipMotionError, ValueError):
    """A lip index map is malformed or does not fit a cloud."""


class DatasetFormatError(LipMotionError, ValueError):
    """A dataset file could not be parsed."""

    def __init__(self, path, message: str, line: Optional[int] = None, offset: Optional[int] = None):
        self.path = str(path)
        self.line = line
        self.offset = offset
        where = ""
        if line is not None:
            where = f" (line {line})"
        elif offset is not None:
            where = f" (offset {offset})"
        super().__init__(f"{self.path}{where}: {message}")


class DatasetValidationError(LipMotionError, ValueError):
    """A dataset parsed fine but is inconsistent with its manifest."""

    def __init__(self, path, message: str):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")


class ConfigError(LipMotionError, ValueError):
    """A run configuration or CLI argument is invalid."""


class FeedbackError(LipMotionError, RuntimeError):
    """The regional feedback vector was used in a mode that has none."""


class TrainingDivergedError(LipMotionError, RuntimeError):
    """The loss became non-finite during training."""

    def __init__(self, step: int, lr: float, grad_norms: dict[str, float]):
        self.step = step
        self.lr = lr
        self.grad_norms = grad_norms
        worst = max(grad_norms.items(), key=lambda kv: kv[1], default=("none", 0.0))
        super().__init__(
            f"non-finite loss at step {step} (lr={lr:.3g}, largest grad norm {worst[0]}={worst[1]:.3g})"
        )


class DecompositionError(LipMotionError, ValueError):
    """A dataset cannot support the text/speaker decomposition check."""


class CheckpointError(LipMotionError, ValueError):
    """A checkpoint file is malformed or incompatible."""


class EmptyInputError(LipMotionError, ValueError):
    """An operation that needs at least one item received none."""
