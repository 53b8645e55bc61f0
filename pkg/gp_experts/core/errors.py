from typing import Optional


class GpExpertsError(Exception):
    """Base class for every error raised by the library."""


class InvalidParameterError(GpExpertsError, ValueError):
    pass


class DomainError(InvalidParameterError):
    pass


class NumericFailureError(GpExpertsError):
    pass


class InvalidStateError(GpExpertsError):
    pass


class RunawayTruncationError(InvalidStateError):
    pass


class SamplerDiagnosticError(GpExpertsError):
    pass


class ConfigError(GpExpertsError):
    def __init__(self, message: str, fields: Optional[list] = None):
        super().__init__(message)
        self.fields = list(fields or [])


class TraceFormatError(GpExpertsError):
    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class ChainFailure(GpExpertsError):
    """An error raised inside a sweep, tagged with where it happened."""

    def __init__(self, model: str, iteration: int, cause: Exception):
        super().__init__(f"{model} chain failed at iteration {iteration}: {cause}")
        self.model = model
        self.iteration = iteration
        self.cause = cause
