"""Exception hierarchy shared by all mobiflow modules."""


class MobiflowError(Exception):
    """Base class for every error raised by the package."""


class NonConcaveMobility(MobiflowError, ValueError):
    pass


class IncompatibleThreshold(MobiflowError, ValueError):
    pass


class CaseBUnsupported(MobiflowError, ValueError):
    pass


class DimensionOne(MobiflowError, ValueError):
    pass


class MassMismatch(MobiflowError, ValueError):
    pass


class ThresholdExceeded(MobiflowError, ValueError):
    pass


class InfiniteConstant(MobiflowError, ArithmeticError):
    pass


class NotConverged(MobiflowError, RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class NewtonDiverged(MobiflowError, RuntimeError):
    pass


class NonZeroMeanRHS(MobiflowError, ValueError):
    pass


class DegenerateWeight(MobiflowError, ValueError):
    pass


class DegenerateDensity(MobiflowError, ValueError):
    pass


class UnresolvedEpsilon(MobiflowError, ValueError):
    pass


class MobilityLinear(MobiflowError, ValueError):
    pass


class ConfigInvalid(MobiflowError, ValueError):
    """Invalid run configuration; ``pointer`` is a JSON pointer to the bad field."""

    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


class InvariantViolated(MobiflowError, AssertionError):
    """A checked invariant (mass, maximum principle, tolerance) failed."""
