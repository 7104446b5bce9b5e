"""Exception hierarchy shared by every ledger module."""

from __future__ import annotations

from typing import Any


class DesError(Exception):
    """Base class for all ledger errors."""


class ParseError(DesError):
    """Wire bytes are not a well-formed event document."""

    def __init__(self, message: str, offset: int | None = None) -> None:
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class NullForbidden(ParseError):
    """An explicit JSON null was found; absence must be expressed by omission."""

    def __init__(self, path: str) -> None:
        super().__init__(f"explicit null at {path}")
        self.path = path


class FormatError(DesError):
    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")
        self.path = path


class EnumViolation(DesError):
    def __init__(self, path: str, token: Any) -> None:
        super().__init__(f"{path}: {token!r} is neither a core token nor a valid namespaced extension")
        self.path = path
        self.token = token


class CanonicalizationError(DesError):
    pass


class SealPreconditionError(DesError):
    pass


class AlreadySealed(DesError):
    pass


class SignatureMissing(DesError):
    pass


class UnsupportedAlgorithm(DesError):
    pass


class RejectedInvalid(DesError):
    """A draft failed validation; nothing was appended."""

    def __init__(self, report: Any) -> None:
        rules = sorted({v.rule_id for v in report.violations})
        super().__init__(f"draft rejected by validator: {', '.join(rules)}")
        self.report = report


class StreamMismatch(DesError):
    pass


class BatchGapError(DesError):
    pass


class TargetUnsealed(DesError):
    pass


class StaleEnrichment(DesError):
    pass


class ConversionError(DesError):
    pass


class RejectUnsealed(DesError):
    pass


class DuplicateSequence(DesError):
    pass


class DuplicateDecision(DesError):
    pass


class UsageError(DesError):
    pass
