"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class MemoryEngineError(Exception):
    """Base class for all engine errors."""


class ValidationError(MemoryEngineError, ValueError):
    pass


class NotFoundError(MemoryEngineError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class StorageError(MemoryEngineError, OSError):
    pass


class CorruptRecordError(StorageError):
    """A persisted JSONL record could not be decoded.

    ``lineno`` is 1-based and points at the offending line.
    """

    def __init__(self, path: str, lineno: int, detail: str) -> None:
        super().__init__(f"{path}:{lineno}: {detail}")
        self.path = path
        self.lineno = lineno


class ProvenanceError(ValidationError):
    """A summary unit would be created without a resolvable raw source."""


class DanglingLinkError(ProvenanceError):
    pass


class TemplateError(MemoryEngineError, KeyError):
    def __init__(self, kind: str, missing: list[str]) -> None:
        super().__init__(f"{kind}: missing placeholder(s) {', '.join(missing)}")
        self.missing = missing

    def __str__(self) -> str:
        return str(self.args[0])


class FormatError(MemoryEngineError, ValueError):
    """Model output did not contain a payload matching the expected schema."""


class BackendError(MemoryEngineError):
    """Model backend failed (transport, timeout, or exhausted script)."""

    def __init__(self, message: str, retryable: bool = True) -> None:
        super().__init__(message)
        self.retryable = retryable


class BatchApplyError(MemoryEngineError):
    """Epoch batch stopped part way; ``last_applied`` is the index of the last
    op that was committed (-1 if none)."""

    def __init__(self, last_applied: int, cause: Exception) -> None:
        super().__init__(f"batch stopped after op {last_applied}: {cause}")
        self.last_applied = last_applied
        self.cause = cause
