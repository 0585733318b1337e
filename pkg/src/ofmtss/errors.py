"""Exception types raised across the package."""


class OfmtError(ValueError):
    """Base class for invalid inputs and failed numerical preconditions."""


class RateMismatchError(OfmtError):
    pass


class UndefinedMetricError(OfmtError):
    pass


class DesignError(OfmtError):
    """A design target (e.g. Nyquist leakage) could not be met.

    The achieved value is kept on ``achieved`` so callers can report it.
    """

    def __init__(self, message: str, achieved: float | None = None):
        super().__init__(message)
        self.achieved = achieved


class IciConstraintError(OfmtError):
    pass


class NumericalFailure(RuntimeError):
    """A computation produced a non-finite or otherwise unusable value."""
