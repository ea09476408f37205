"""Exception hierarchy shared by all cycleflow modules."""


class CycleflowError(Exception):
    """Base class for every error raised by cycleflow."""


class GraphError(CycleflowError, ValueError):
    """The arc list violates an oriented-graph invariant."""


class NotConnected(CycleflowError):
    """An operation requiring a connected graph received a disconnected one."""


class InvalidTree(CycleflowError):
    """A spanning tree does not belong to the graph or is not a tree."""


class ShapeMismatch(CycleflowError, ValueError):
    pass


class UnbalancedInjection(CycleflowError, ValueError):
    """Injections do not sum to zero."""


class MissingElementaryColumn(CycleflowError, KeyError):
    pass


class UncertifiedInputs(CycleflowError):
    """A basis or particular solution failed its exactness certificate."""


class HorizonMismatch(CycleflowError, ValueError):
    pass


class LocalInfeasible(CycleflowError):
    """A cyber agent's local subproblem has an empty feasible set."""


class MaxRounds(CycleflowError):
    pass


class ValidationError(CycleflowError, ValueError):
    """A problem document failed validation.

    ``field`` names the offending JSON field, ``reason`` says what is wrong.
    """

    def __init__(self, field, reason):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class ParseError(CycleflowError, ValueError):
    pass


class IoError(CycleflowError, OSError):
    """A file could not be written, or there was nothing to write."""
