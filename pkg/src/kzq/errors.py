"""Exception hierarchy shared by the predictor, simulator and CLI."""


class KzqError(Exception):
    """Base class for all package errors."""


class DivergenceError(KzqError, ArithmeticError):
    """A quantity diverges (e.g. relaxation time exactly at criticality)."""


class RootNotFoundError(KzqError, ArithmeticError):
    """Bracketing failed to find a sign change.

    ``bracket`` holds the last interval that was examined.
    """

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class QuadratureError(KzqError, ArithmeticError):
    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class RegimeError(KzqError, ValueError):
    """A closed form was requested outside its regime of validity."""


class SingularityError(KzqError, ArithmeticError):
    pass


class ProtocolRangeError(KzqError, ValueError):
    """Tabulated protocol evaluated outside its sample range."""


class IonCrossingError(KzqError, RuntimeError):
    """Axial ordering of the chain was violated; the trajectory is unphysical."""


class InitializationError(KzqError, RuntimeError):
    pass


class FitError(KzqError, ValueError):
    pass


class ConfigError(KzqError, ValueError):
    """Invalid run configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key
