"""Exception types shared across the package."""
from __future__ import annotations


class LoopidError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(LoopidError):
    """Invalid configuration values or inconsistent config sections."""


class ShapeError(LoopidError):
    """Array dimensions do not match what an operation expects."""


class SplitError(LoopidError):
    """A category cannot satisfy the train/validation split rules."""


class CentroidError(LoopidError):
    """A class has no training samples to average."""


class TrainingDivergedError(LoopidError):
    """Loss became non-finite during training.

    Carries the epoch, batch index, and learning rates at the point of failure.
    """

    def __init__(self, message: str, epoch: int, batch: int, lrs: dict[str, float]):
        super().__init__(f"{message} (epoch={epoch}, batch={batch}, lrs={lrs})")
        self.epoch = epoch
        self.batch = batch
        self.lrs = lrs


class ScoringError(LoopidError):
    """Logits passed to a scoring function are not finite."""


class CalibrationError(LoopidError):
    """Threshold calibration target cannot be met.

    ``frontier`` describes what was achievable (best precision / separation).
    """

    def __init__(self, message: str, frontier: dict | None = None):
        super().__init__(message)
        self.frontier = frontier or {}


class MetricError(LoopidError):
    """A metric is undefined for the given records."""


class QueueError(LoopidError):
    """Annotation queue misuse."""


class TaskImmutableError(QueueError):
    """Attempt to modify a labeled task."""


class UpdateError(LoopidError):
    """Model update cannot proceed (e.g. novel class without human labels)."""


class AnnotationTimeoutError(LoopidError):
    """Waiting for human annotation exceeded the configured timeout."""


class ReportDecodeError(LoopidError):
    """A report file is missing or corrupt.

    ``offset`` points at the byte where decoding failed, when known.
    """

    def __init__(self, message: str, path: str, offset: int | None = None):
        super().__init__(message)
        self.path = path
        self.offset = offset
