"""
Exception hierarchy shared by the services and the command handlers.
"""
from typing import Optional


class CodedBackoffError(Exception):
    """Base class for every error the simulator raises on purpose."""


class ConfigError(CodedBackoffError):
    """Invalid run parameters, flags or config file contents."""


class ScheduleError(CodedBackoffError):
    """Arrival schedule parameters the generators cannot honor."""


class TraceParseError(CodedBackoffError):
    """Malformed trace file. Carries the path and the 1-based line number."""

    def __init__(self, message: str, path: Optional[str] = None, line_number: Optional[int] = None):
        self.path = path
        self.line_number = line_number
        location = ""
        if path is not None:
            location = f"{path}:"
        if line_number is not None:
            location += f"{line_number}:"
        super().__init__(f"{location} {message}" if location else message)


class SingularMatrixError(CodedBackoffError):
    """Transmission matrix has no inverse over the field."""


class InvariantError(CodedBackoffError):
    """A simulator self-check failed (conservation, decoder agreement, ...)."""


class LemmaViolationError(CodedBackoffError):
    """A per-epoch potential verdict failed while strict lemma checking was on."""

    def __init__(self, verdict):
        self.verdict = verdict
        super().__init__(f"potential bound violated: {verdict}")
