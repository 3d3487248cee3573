"""Exception hierarchy. CLI exit codes hang off these classes."""


class HRQError(Exception):
    exit_code = 1


class ConfigError(HRQError, ValueError):
    """A parameter violates its documented precondition."""

    exit_code = 2


class ShapeError(HRQError, ValueError):
    exit_code = 2


class UsageError(HRQError, ValueError):
    exit_code = 2


class DataError(HRQError, ValueError):
    exit_code = 2


class InputError(HRQError, ValueError):
    """Non-finite or otherwise unusable numeric input."""

    exit_code = 2


class NumericFault(HRQError, FloatingPointError):
    """Training produced a non-finite loss."""

    exit_code = 3

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class FormatError(HRQError, ValueError):
    """A serialized document has the wrong format or version."""

    exit_code = 4
