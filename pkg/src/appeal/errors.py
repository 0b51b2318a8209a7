"""Shared exception types for the appeal pipeline."""


class AppealError(Exception):
    """Base class for all pipeline errors."""


class ConfigFormatError(AppealError):
    """A config file failed to parse."""


class ValidationError(AppealError):
    """A value, field, or precondition check failed."""


class ConfigurationError(AppealError):
    """A backend role is unbound or a backend id is unknown."""


class BackendError(AppealError):
    """A model-backend call failed.

    `retryable` marks failures where a repeat call may succeed (network
    hiccups, transient OOM); callers decide whether to retry.
    """

    def __init__(self, message: str, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


class PipelineError(AppealError):
    """An internal invariant broke: a pipeline bug, not an input problem."""


class StageError(AppealError):
    """A CLI stage failed partway through its run."""
