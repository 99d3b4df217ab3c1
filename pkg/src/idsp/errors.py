"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class IDSPError(Exception):
    exit_code = 3


class InputError(IDSPError, ValueError):
    """Malformed data, bad parameter values, or mismatched shapes."""

    exit_code = 1


class ParameterError(InputError):
    pass


class DegenerateBandwidthError(InputError):
    """Median heuristic produced a zero bandwidth (all rows identical)."""


class NumericalError(IDSPError, ArithmeticError):
    exit_code = 2


class InvariantViolation(IDSPError, AssertionError):
    exit_code = 3
