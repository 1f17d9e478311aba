"""Exception hierarchy shared across the package.

The CLI maps each family onto an exit code: ConfigError -> 1, DataError -> 2,
RemoteServiceError -> 3.
"""

from __future__ import annotations

from typing import Any


class ConvSimError(Exception):
    """Base class for all package errors."""


class ConfigError(ConvSimError):
    pass


class DataError(ConvSimError):
    pass


class ParseError(DataError):
    def __init__(self, path: str, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class DuplicateDocument(DataError):
    pass


class EmptyCollection(DataError):
    pass


class MissingJudgments(DataError):
    pass


class StateClosed(ConvSimError):
    """A feedback move was attempted after patience ran out or the need was met."""


class InvalidMove(ConvSimError):
    pass


class PoolMiss(ConvSimError):
    """No pool question shares a term with the query."""


class NoEntities(ConvSimError):
    """No entity passed the saliency threshold."""


class DegenerateVariance(ConvSimError):
    pass


class RemoteServiceError(ConvSimError):
    pass


class RemoteError(RemoteServiceError):
    def __init__(self, status: int | None, message: str = ""):
        self.status = status
        super().__init__(f"remote call failed (status={status}) {message}".rstrip())


class ModelTimeout(RemoteServiceError, TimeoutError):
    pass


class MockExhausted(RemoteServiceError):
    pass


class SimulatorUnavailable(RemoteServiceError):
    pass


class EmptyCompletion(RemoteServiceError):
    pass


class EmbedderUnavailable(RemoteServiceError):
    pass


class RerankerUnavailable(RemoteServiceError):
    def __init__(self, message: str, partial: dict[str, float] | None = None):
        self.partial = dict(partial or {})
        super().__init__(message)


class StageError(ConvSimError):
    """A pipeline stage failed; the turn was aborted.

    ``transcript`` holds the moves made before the failure.
    """

    def __init__(self, stage: str, cause: BaseException, transcript: list[Any] | None = None):
        self.stage = stage
        self.cause = cause
        self.transcript = list(transcript or [])
        super().__init__(f"stage '{stage}' failed: {cause}")
