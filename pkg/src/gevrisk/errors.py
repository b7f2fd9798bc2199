"""Exception hierarchy shared across the package.

Each subclass carries the CLI exit code it maps to.
"""


class GevRiskError(Exception):
    exit_code = 1


class ConfigError(GevRiskError):
    exit_code = 2


class DataError(GevRiskError):
    exit_code = 3


class EmptySeriesError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class NumericalError(GevRiskError):
    exit_code = 4


class ParameterDomainError(NumericalError, ValueError):
    pass


class DegenerateSampleError(NumericalError):
    pass


class NoConvergenceError(NumericalError):
    pass


class SchemeFailureError(NumericalError):
    pass
