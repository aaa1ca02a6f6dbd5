"""Exception hierarchy shared by every subpackage."""


class LearnedPFError(Exception):
    """Base class. ``category`` is used by the CLI to pick an exit code."""

    category = "error"
    exit_code = 1


class DimensionError(LearnedPFError, ValueError):
    category = "dimension"
    exit_code = 2


class ConfigError(LearnedPFError, ValueError):
    category = "config"
    exit_code = 3


class NumericalError(LearnedPFError, ArithmeticError):
    category = "numerical"
    exit_code = 4


class ContractError(LearnedPFError, ValueError):
    category = "contract"
    exit_code = 5


class DegeneracyError(NumericalError):
    """All particles have zero weight."""

    category = "degeneracy"
    exit_code = 6

    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"{message} (t={t})")
        self.t = t


class StoreError(LearnedPFError, KeyError):
    category = "store"
    exit_code = 7

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class AggregationError(LearnedPFError, ValueError):
    category = "aggregation"
    exit_code = 8


class UndefinedMetricError(LearnedPFError, ValueError):
    category = "metric"
    exit_code = 9
