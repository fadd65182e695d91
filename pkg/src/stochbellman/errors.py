"""Exception hierarchy shared by all solver modules."""


class StochBellmanError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(StochBellmanError):
    """Malformed input data (trees, processes, problem definitions)."""


class OrphanNode(ValidationError):
    pass


class ProbabilityMass(ValidationError):
    pass


class StageGap(ValidationError):
    pass


class StageOrder(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class BackendClash(ValidationError):
    """Operation requested across incompatible function backends."""


class NotPerp(ValidationError):
    """Tilt process fails the zero-conditional-mean test."""


class NotMarkov(ValidationError):
    pass


class SolverError(StochBellmanError):
    """Numerical failure during a solve; carries the offending node when known."""

    def __init__(self, message, node=None):
        if node is not None:
            message = f"{message} (node {node})"
        super().__init__(message)
        self.node = node


class UnboundedBelow(SolverError):
    pass


class NonLinearRecession(SolverError):
    pass


class Unbounded(SolverError):
    pass


class Infeasible(SolverError):
    pass


class IterationLimit(SolverError):
    pass


class RowBlowup(SolverError):
    pass


class TreeTooLarge(SolverError):
    pass


class SingularRiccati(SolverError):
    pass


class ArbitrageRefusal(SolverError):
    pass


class UnboundedExp(SolverError):
    pass


class NonMonotone(SolverError):
    pass
