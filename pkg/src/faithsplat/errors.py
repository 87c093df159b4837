"""Structured errors. Every error carries a machine-readable code so the CLI
can print ``error: <code>: <message>`` and exit nonzero."""

from __future__ import annotations


class FaithsplatError(Exception):
    """Base class for all structured errors raised by this package."""

    code = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def __str__(self) -> str:
        return self.message


class ShapeMismatchError(FaithsplatError):
    code = "shape-mismatch"


class MissingPoseError(FaithsplatError):
    """A rigid group references a pose track with no pose at the requested time."""

    code = "missing-pose"

    def __init__(self, object_id: int, timestamp: int):
        super().__init__(
            f"no pose for rigid object {object_id} at timestamp {timestamp}"
        )
        self.object_id = object_id
        self.timestamp = timestamp


class ParseError(FaithsplatError):
    """Malformed file content. ``offset`` is the byte offset of the problem."""

    code = "parse"

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ConfigError(FaithsplatError):
    code = "bad-config"


class BadArgumentError(FaithsplatError):
    code = "bad-arg"


class RestorerError(FaithsplatError):
    code = "restorer"


class TrainingDiverged(FaithsplatError):
    """Raised when the training loss goes non-finite. Carries the last good state."""

    code = "diverged"

    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state
