"""Exception types shared across the package.

Each maps to a distinct CLI exit code.
"""


class VolError(Exception):
    exit_code = 1


class ConfigError(VolError, ValueError):
    exit_code = 2


class DataError(VolError, ValueError):
    exit_code = 3


class NumericalError(VolError, ArithmeticError):
    exit_code = 4
