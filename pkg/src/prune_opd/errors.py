"""Shared exception types.

All validation failures raise one of these so callers (and the CLI) can map
them onto stable exit codes without string matching.
"""


class PruneOpdError(Exception):
    """Base class for all library errors."""


class InvalidConfigError(PruneOpdError, ValueError):
    """A configuration object violates one of its invariants."""


class InvalidRecordError(PruneOpdError, ValueError):
    """A data record (slice, trace, tensor) violates one of its invariants."""


class EmptyInputError(PruneOpdError, ValueError):
    """An aggregate operation received zero usable inputs."""


class TraceParseError(PruneOpdError, ValueError):
    """A serialized trace or metrics file is malformed.

    Carries the 1-based line number of the offending line when known.
    """

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number
