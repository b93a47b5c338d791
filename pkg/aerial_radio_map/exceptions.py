"""Exceptions raised by aerial_radio_map.

Data problems derive from ``ValueError`` and numerical breakdowns from
``ArithmeticError`` so existing ``except`` clauses keep working. The CLI maps
the two families onto exit codes 3 and 4.
"""
from typing import Optional


class RadioMapError(Exception):
    """Base class for all errors raised by this package."""


class DataError(RadioMapError, ValueError):
    """Input data or configuration cannot be used."""


class NumericalError(RadioMapError, ArithmeticError):
    """A numerical procedure failed to produce a usable result."""


class CoLocated(DataError):
    pass


class ElevationOutOfRange(DataError):
    pass


class InvalidAngle(DataError):
    pass


class InvalidScale(DataError):
    pass


class TooFewSamples(DataError):
    pass


class DegenerateStd(DataError):
    pass


class EmptyBin(DataError):
    pass


class NoOverlap(DataError):
    pass


class NoNeighbors(DataError):
    pass


class InsufficientData(DataError):
    pass


class InvalidSpec(DataError):
    pass


class ConfigError(DataError):
    pass


class NonMonotonicTime(DataError):
    pass


class CalibrationError(DataError):
    pass


class SchemaError(DataError):
    def __init__(self, message: str, line: Optional[int] = None) -> None:
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SingularSystem(NumericalError):
    pass


class FitDiverged(NumericalError):
    pass


class FactorizationFailed(NumericalError):
    pass


class StageFailure(RadioMapError):
    """A pipeline stage failed; ``__cause__`` holds the original error."""

    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
