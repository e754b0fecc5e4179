"""Exception classes shared across the package.

The CLI maps each class to an exit code: configuration problems exit 2,
bad or unresolvable input data exits 3, numeric failures exit 4.
"""


class CovrError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(CovrError, ValueError):
    exit_code = 2


class ShapeError(CovrError, ValueError):
    exit_code = 2


class InputError(CovrError, ValueError):
    exit_code = 3


class DataError(CovrError, ValueError):
    """Malformed or unresolvable dataset content.

    ``line`` is the 1-based line number when the error comes from a
    line-oriented file.
    """

    exit_code = 3

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FormatError(DataError):
    """A binary container failed validation at ``offset`` bytes."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class EvaluationError(CovrError, ArithmeticError):
    exit_code = 4


class TrainingError(CovrError, ArithmeticError):
    exit_code = 4
