"""Overlapped filtered multitone spread-spectrum waveform lab."""

__version__ = "0.1.0"

from .errors import (DesignError, IciConstraintError, NumericalFailure,  # noqa: E402
                     OfmtError, RateMismatchError, UndefinedMetricError)

__all__ = [
    "__version__",
    "OfmtError",
    "DesignError",
    "IciConstraintError",
    "NumericalFailure",
    "RateMismatchError",
    "UndefinedMetricError",
]
