"""Exception hierarchy shared across the package."""

from __future__ import annotations


class FactFinError(Exception):
    """Base class for all package errors."""


class InputError(FactFinError):
    """Bad user input: malformed files, failed validation, bad config.

    The CLI maps these to exit code 2.
    """


class ParseError(InputError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class ValidationError(InputError):
    pass


class ConfigurationError(InputError):
    pass


class SchemaError(InputError):
    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(message)


class InsufficientDataError(FactFinError):
    pass


class DegenerateVolatilityError(FactFinError):
    pass


class UndefinedBaselineError(FactFinError):
    pass


class PerturbationError(FactFinError):
    pass


class TemplateError(FactFinError):
    pass


class GenerationError(FactFinError):
    def __init__(self, message: str, diagnostics: str | None = None, attempts: int = 0):
        self.diagnostics = diagnostics
        self.attempts = attempts
        super().__init__(message)
