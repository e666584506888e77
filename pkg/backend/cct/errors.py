"""
Error types for the covert channel toolkit
Every error carries the CLI exit code it maps to
"""

from typing import Optional


class CctError(Exception):
    """Base class. Runtime failures exit with code 3."""

    exit_code = 3


class ConfigurationError(CctError):
    """Invalid settings, schema mismatch, unknown names. Exit code 2."""

    exit_code = 2


class FieldError(ConfigurationError):
    """Unknown header field or bit length mismatch on write."""


class VariationError(ConfigurationError):
    """A pattern cannot be retargeted because settings are missing."""

    def __init__(self, message: str, missing: Optional[list] = None):
        super().__init__(message)
        self.missing = list(missing or [])


class ConflictError(ConfigurationError):
    """Two combined patterns touch the same bits, element list or gaps."""

    def __init__(self, message: str, pair: tuple = ()):
        super().__init__(message)
        self.pair = pair


class CapacityError(CctError):
    """The carrier cannot hold the requested bits under the settings."""

    def __init__(self, message: str, slot: Optional[int] = None):
        super().__init__(message)
        self.slot = slot


class ParseError(ConfigurationError):
    """Malformed trace, catalog, settings or rule file. Exit code 2.

    Exactly one of offset/line/record is usually set, naming where parsing stopped.
    """

    def __init__(
        self,
        message: str,
        offset: Optional[int] = None,
        line: Optional[int] = None,
        record: Optional[str] = None,
    ):
        where = []
        if offset is not None:
            where.append(f"byte offset {offset}")
        if line is not None:
            where.append(f"line {line}")
        if record is not None:
            where.append(f"record {record}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.offset = offset
        self.line = line
        self.record = record


class DetectorError(CctError):
    """Detector preconditions not met (too few samples, degenerate calibration)."""
