"""Exception types shared across the package."""


class WellplanError(Exception):
    """Base class for all package errors."""


class ValidationError(WellplanError):
    """Input data violates a documented invariant."""


class ParameterError(WellplanError):
    """A configuration or algorithm parameter is out of range."""


class EmptyDatasetError(ValidationError):
    """No usable records remain after filtering."""


class SchemaError(ValidationError):
    """A file does not match its documented format.

    Carries the 1-based line number of the offending row when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
