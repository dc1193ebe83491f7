"""Exception hierarchy shared across the toolkit."""
from __future__ import annotations


class PolycapError(Exception):
    """Base class for all toolkit errors."""


class LanguageError(PolycapError):
    """Unknown or malformed language code."""


class ManifestError(PolycapError):
    """Manifest file cannot be parsed or violates an invariant."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InvariantError(PolycapError):
    """A domain type invariant does not hold."""


class BackendError(PolycapError):
    """An embedding or translation backend failed.

    ``retryable`` distinguishes transient faults (timeouts, 5xx) from
    permanent ones (bad request, unsupported configuration).
    """

    def __init__(self, message: str, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


class BackendUnavailableError(BackendError):
    """Backend cannot be constructed or reached at all."""


class UnsupportedPairError(BackendError):
    """Requested (source, target) pair is outside a backend's support."""


class MetricError(PolycapError):
    """Invalid input to a metric computation."""


class RatingsError(PolycapError):
    """Ratings file cannot be parsed or a rating is out of contract."""


class StageOrderError(PolycapError):
    """A pipeline stage was invoked before its prerequisites ran."""
