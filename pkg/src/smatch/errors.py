"""Exception types.

The CLI maps ``InputError`` to exit code 2 and ``NumericError`` to exit code 3.
"""


class SmatchError(Exception):
    pass


class InputError(SmatchError, ValueError):
    """Malformed input: bad files, columns, flags or preconditions."""


class NumericError(SmatchError, ArithmeticError):
    """A numerical procedure failed (non-convergence, singular system, ...)."""
