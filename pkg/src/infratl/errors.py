"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: configuration problems exit with 2,
data problems with 3 and numerical failures with 4.
"""


class InfraTLError(Exception):
    exit_code = 1


class ConfigError(InfraTLError, ValueError):
    exit_code = 2


class DomainError(InfraTLError, ValueError):
    """An argument lies outside the domain of a formula."""

    exit_code = 2


class DataError(InfraTLError):
    exit_code = 3


class DegenerateProfileError(DataError, ValueError):
    pass


class CoverageError(DataError):
    pass


class ShapeError(DataError, ValueError):
    pass


class ChecksumError(DataError):
    pass


class FormatError(DataError):
    pass


class NumericalError(InfraTLError, ArithmeticError):
    exit_code = 4
