"""Exception hierarchy shared by every module.

The CLI maps ``DataError`` (and subclasses) to exit code 1 and
``UsageError`` to exit code 2.
"""


class TheftwatchError(Exception):
    pass


class DataError(TheftwatchError):
    """Input data violates a schema or invariant."""


class ParseError(DataError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class FormatError(DataError):
    """Weight file is truncated, mis-tagged or shaped wrong."""


class NumericError(DataError, ArithmeticError):
    """A non-finite value appeared in a forward pass or a loss."""


class UsageError(TheftwatchError, ValueError):
    """Caller passed arguments outside an operation's contract."""
