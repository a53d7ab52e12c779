"""Exception hierarchy shared by all gaussruin modules."""


class GaussRuinError(Exception):
    """Base class for every error raised by the library."""


class NonPositiveTime(GaussRuinError, ValueError):
    pass


class SingularModel(GaussRuinError, ValueError):
    pass


class GridNotSorted(GaussRuinError, ValueError):
    pass


class DegenerateGrid(GaussRuinError, ValueError):
    pass


class NotPositiveDefinite(GaussRuinError, ValueError):
    pass


class InvalidDirection(GaussRuinError, ValueError):
    pass


class DimensionTooLarge(GaussRuinError, ValueError):
    pass


class NoFeasibleIndexSet(GaussRuinError, RuntimeError):
    """No candidate index set passed the KKT tests.

    On valid input this indicates a bug (or a pathologically conditioned
    matrix), never a property of the problem.
    """


class FactorizationFailed(GaussRuinError, RuntimeError):
    pass


class AssumptionViolated(GaussRuinError, ValueError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class AccuracyNotReached(GaussRuinError, RuntimeWarning):
    pass


class WeightDegeneracy(GaussRuinError, RuntimeWarning):
    pass


class MalformedSpec(GaussRuinError, ValueError):
    def __init__(self, pointer, message):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


class WriteFailure(GaussRuinError, OSError):
    pass
