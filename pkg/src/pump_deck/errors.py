"""Exception and warning types raised across the package."""


class PumpDeckError(Exception):
    """Base class for all package errors."""


class NotHermitian(PumpDeckError, ValueError):
    pass


class DegenerateSpectrum(PumpDeckError, ValueError):
    """Raised when an instantaneous gap falls below the gap threshold.

    ``location`` carries whatever parameters identify the offending point
    (e.g. ``{"k": ..., "s": ..., "delta": ...}``) when the caller knows them.
    """

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = dict(location or {})


class DiagonalRequest(PumpDeckError, ValueError):
    pass


class AmbiguousGauge(PumpDeckError, ValueError):
    pass


class ZeroSweepRate(PumpDeckError, ZeroDivisionError):
    pass


class StepTooLarge(PumpDeckError, RuntimeError):
    pass


class UnsupportedEndpoints(PumpDeckError, ValueError):
    pass


class NotTwoBand(PumpDeckError, ValueError):
    pass


class NonIntegerResult(PumpDeckError, RuntimeError):
    pass


class ConfigInvalid(PumpDeckError, ValueError):
    """Bad experiment configuration; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class ZeroDephasingWarning(UserWarning):
    """A first-order formula that assumes gamma > 0 was evaluated at gamma = 0."""


class SymmetryWarning(UserWarning):
    """Spectrum or initial populations are not even in k."""


class NonCancellationWarning(UserWarning):
    """The odd-in-k part of the numeric current did not cancel."""
