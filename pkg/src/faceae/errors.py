"""Exception types shared across the package.

Each maps to one CLI exit code: usage errors exit 1, data errors exit 2,
numerical failures exit 3.
"""


class FaceError(Exception):
    exit_code = 1


class DataError(FaceError, ValueError):
    exit_code = 2


class NumericalError(FaceError, ArithmeticError):
    exit_code = 3
