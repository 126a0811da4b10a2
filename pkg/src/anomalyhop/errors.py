"""Exception types shared across the package.

Argument/precondition violations raise plain ``ValueError``; the classes
below cover the failure modes the CLI maps to distinct exit codes.
"""


class AnomalyHopError(Exception):
    exit_code = 1


class DatasetNotFoundError(AnomalyHopError):
    exit_code = 3


class CorruptInputError(AnomalyHopError):
    exit_code = 4


class ConfigInfeasibleError(AnomalyHopError):
    exit_code = 5


class InsufficientDataError(AnomalyHopError):
    exit_code = 6


class NumericError(AnomalyHopError):
    exit_code = 7


class UndefinedMetricError(AnomalyHopError):
    exit_code = 8


class CorruptBundleError(AnomalyHopError):
    exit_code = 9


class UnsupportedBundleError(AnomalyHopError):
    exit_code = 10
