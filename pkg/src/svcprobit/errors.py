"""Exception hierarchy. The CLI maps each class to an exit code."""


class SvcProbitError(Exception):
    exit_code = 1


class ConfigError(SvcProbitError, ValueError):
    exit_code = 2


class DataError(SvcProbitError, ValueError):
    exit_code = 3


class NumericalError(SvcProbitError, ArithmeticError):
    exit_code = 4


class SinkError(SvcProbitError, OSError):
    """A sink failed to write; a checkpoint was saved before raising."""

    exit_code = 3

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
