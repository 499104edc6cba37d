"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CollageError(Exception):
    """Base class for every error raised by this package."""


class PreconditionError(CollageError, ValueError):
    """A caller violated an operation's input contract."""


class CorruptInput(PreconditionError):
    """An input image or file could not be decoded."""


class ParseError(CollageError):
    """Text is not a syntactically valid structured document."""


class SchemaError(CollageError):
    """Document parsed but failed validation; carries the full report."""

    def __init__(self, report):
        self.report = report
        super().__init__("; ".join(report.violations) or "schema violation")


class MalformedPlan(CollageError):
    """Model output stayed unparseable after the repair budget."""

    def __init__(self, message: str, violations: list[str] | None = None):
        super().__init__(message)
        self.violations = list(violations or [])


class ProviderError(CollageError):
    pass


class TransportError(ProviderError):
    pass


class RateLimited(TransportError):
    pass


class AuthError(ProviderError):
    pass


class ContentRefusal(ProviderError):
    pass


class DecodeError(ProviderError):
    pass


class DimensionMismatch(ProviderError):
    pass


class IoError(CollageError, OSError):
    """Persistence failure inside a run directory."""


class DimensionError(CollageError, ValueError):
    pass


class DegenerateEmbedding(CollageError, ValueError):
    pass


class DegenerateStructure(CollageError, ValueError):
    pass


class FatalError(CollageError):
    """Unrecoverable fault that stopped a pipeline run."""


class CorruptRun(CollageError):
    """Run directory artifacts disagree with the recorded trace."""
