"""Exception hierarchy.

Every domain error derives from :class:`SelmOpfError`; the CLI reports the
concrete class name on stderr and exits with status 1.
"""


class SelmOpfError(Exception):
    """Base class for all domain errors raised by selmopf."""


# case_io
class MalformedFile(SelmOpfError):
    pass


class ValidationError(SelmOpfError):
    def __init__(self, invariant, detail=""):
        self.invariant = invariant
        msg = invariant if not detail else f"{invariant}: {detail}"
        super().__init__(msg)


class IslandError(SelmOpfError):
    pass


# grid
class SingularBranch(SelmOpfError):
    pass


class DimensionMismatch(SelmOpfError):
    pass


# powerflow
class NonConvergence(SelmOpfError):
    def __init__(self, msg, mismatch=float("nan"), iterations=0):
        super().__init__(msg)
        self.mismatch = mismatch
        self.iterations = iterations


class SingularJacobian(SelmOpfError):
    pass


# acopf
class OpfError(SelmOpfError):
    def __init__(self, msg, residuals=None, iterations=0):
        super().__init__(msg)
        self.residuals = dict(residuals or {})
        self.iterations = iterations


class Infeasible(OpfError):
    pass


class MaxIterations(OpfError):
    pass


# scenario
class TooManyFailures(SelmOpfError):
    pass


# selm / pipeline
class SingularSystem(SelmOpfError):
    pass


class InsufficientData(SelmOpfError):
    pass


class DegenerateTarget(UserWarning):
    """A target column with zero variance was fit as a constant."""
