"""Exception hierarchy shared by every module of the package."""


class SegFreeError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SegFreeError, ValueError):
    """Invalid configuration or input data (empty corpus, bad boundaries...)."""


class BoundaryDomainError(SegFreeError, ValueError):
    """A boundary position falls outside the active chunk."""


class DegenerateDesignError(SegFreeError, ValueError):
    """Regression design matrix carries no information."""


class TrainingError(SegFreeError, RuntimeError):
    """An optimiser diverged."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class DecoderStateError(SegFreeError, RuntimeError):
    """Decoder contexts cannot be explained by the decoder."""


class TraceMismatchError(SegFreeError, ValueError):
    """Trace delays do not line up with the hypothesis being scored."""


class InsufficientDataError(SegFreeError, ValueError):
    """Too few segments for a resampling test."""


class SessionError(SegFreeError, RuntimeError):
    """A streaming session aborted; ``trace`` holds events up to the failure."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
