"""Exception types shared across pipeline stages."""

from __future__ import annotations


class StylecastError(Exception):
    """Base class for every error raised by this package."""


class SignalError(StylecastError, ValueError):
    pass


class MediaDecodeError(StylecastError):
    pass


class ManifestError(StylecastError, ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class PlatformError(StylecastError):
    def __init__(self, message: str, code: int | str | None = None, platform: str | None = None):
        super().__init__(message)
        self.code = code
        self.platform = platform


class PlatformAuthError(PlatformError):
    pass


class DatasetError(StylecastError, ValueError):
    def __init__(self, message: str, cells: list[tuple[str, str, int]] | None = None):
        super().__init__(message)
        self.cells = cells or []


class ProviderError(StylecastError):
    """A model provider failed. ``retryable`` marks timeouts, refusals and 5xx."""

    def __init__(self, message: str, retryable: bool = False, fingerprint: str | None = None):
        super().__init__(message)
        self.retryable = retryable
        self.fingerprint = fingerprint


class EmbeddingError(StylecastError, ValueError):
    pass


class IncompleteIndexError(StylecastError):
    pass


class SelectionError(StylecastError, ValueError):
    pass


class ScoringError(StylecastError, ValueError):
    pass


class StageError(StylecastError):
    """A pipeline stage cannot run, usually because a prior stage is missing."""

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        self.stage = stage
