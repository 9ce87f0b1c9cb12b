"""Exception hierarchy shared across the package."""


class CycloTrafficError(Exception):
    """Base class for all package errors."""


class OutOfRange(CycloTrafficError):
    pass


class MissingValue(CycloTrafficError):
    pass


class DimensionMismatch(CycloTrafficError, ValueError):
    pass


class IsolatedSegment(CycloTrafficError):
    pass


class ConvergenceFailure(CycloTrafficError):
    pass


class DegenerateSpectrum(CycloTrafficError):
    pass


class SeriesTooShort(CycloTrafficError):
    pass


class InsufficientData(CycloTrafficError):
    pass


class ColdStart(CycloTrafficError):
    """A predictor was asked for an interval it has no state for."""


class Unreachable(CycloTrafficError):
    pass


class HorizonExceeded(CycloTrafficError):
    """A trip ran past the end of the traffic grid."""


class CycleGuard(CycloTrafficError):
    """Greedy re-routing committed more edges than the guard allows."""


class NoEligiblePairs(CycloTrafficError):
    pass


class ConfigError(CycloTrafficError, ValueError):
    pass
