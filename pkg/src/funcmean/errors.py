"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, file-format and I/O problems with 3, numerical failures with 4.
"""

__all__ = ["ConfigError", "DataFormatError", "NumericalError", "TrainingDiverged"]


class ConfigError(ValueError):
    """Invalid configuration: bad parameter values or inconsistent shapes."""


class DataFormatError(IOError):
    """A binary or text input does not match its declared format."""


class NumericalError(ArithmeticError):
    """A numerical routine failed to converge or produced invalid values."""


class TrainingDiverged(NumericalError):
    """Training loss exceeded the divergence guard."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
