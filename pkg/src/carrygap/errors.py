"""Exception hierarchy; each class maps to a CLI exit code."""


class CarryGapError(Exception):
    exit_code = 1


class ConfigError(CarryGapError, ValueError):
    exit_code = 2


class DataError(CarryGapError, ValueError):
    exit_code = 3


class NumericalError(CarryGapError, ArithmeticError):
    exit_code = 4


class RankDeficiencyError(NumericalError):
    """Design matrix is (numerically) rank deficient."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class IdentificationError(NumericalError):
    """Option chain cannot pin down a discount factor."""


class BootstrapError(NumericalError):
    """OIS curve construction failed for a date."""
