"""Option-implied carry gap: parity-implied discount factors, OIS curves,
path-risk regressors, HAC regressions and out-of-sample validation."""

from .errors import (BootstrapError, CarryGapError, ConfigError, DataError, IdentificationError, NumericalError,
                     RankDeficiencyError)

__version__ = "0.1.0"

__all__ = ["BootstrapError", "CarryGapError", "ConfigError", "DataError", "IdentificationError", "NumericalError",
           "RankDeficiencyError", "__version__"]
