"""Exception types shared across the toolkit.

The CLI maps these onto exit statuses: configuration, shape, and format
problems are usage errors (exit 2); metric and training failures are
runtime check failures (exit 1).
"""


class DiseError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(DiseError):
    """An invalid configuration value or inconsistent spec."""


class ShapeError(DiseError):
    """An input with the wrong dimensions."""


class DomainError(DiseError):
    """A numerical argument outside the mathematical domain of an operation."""


class DegenerateBatchError(DiseError):
    """A train-mode batch too small for batch statistics (size < 2)."""


class DatasetFormatError(DiseError):
    """A malformed dataset file; carries a 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UndefinedMetricError(DiseError):
    """A metric that needs both classes was asked of a single-class sample set."""


class TrainingDiverged(DiseError):
    """Training produced a non-finite loss or gradient; carries the step index."""

    def __init__(self, step: int, detail: str):
        self.step = step
        super().__init__(f"training diverged at step {step}: {detail}")
