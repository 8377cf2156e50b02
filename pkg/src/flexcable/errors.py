"""Exception types raised across the package."""


class FlexCableError(Exception):
    """Base class for all package errors."""


class GimbalLock(FlexCableError):
    pass


class DegenerateSegment(FlexCableError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class InfeasibleAllocation(FlexCableError):
    pass


class NumericalBlowup(FlexCableError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class UnreachableAttitude(FlexCableError):
    pass


class GridMismatch(FlexCableError):
    pass


class AllZeroSpectrum(FlexCableError):
    pass


class ConvergenceFailure(FlexCableError):
    pass


class NoConvergence(FlexCableError):
    pass


class NoFeasibleSolution(FlexCableError):
    """Raised when the planner exhausts its budget; carries the best attempt."""

    def __init__(self, message, best=None, report=None):
        super().__init__(message)
        self.best = best
        self.report = report


class InvalidRecording(FlexCableError):
    pass


class DimensionMismatch(FlexCableError):
    pass


class ConfigError(FlexCableError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class StaleArtifact(FlexCableError):
    pass
