"""Exception hierarchy shared by all coordkit modules."""


class CoordkitError(Exception):
    """Base class. ``t`` is filled in when the error is raised during a simulation."""

    t = None

    def annotate(self, t):
        self.t = t
        return self

    def __str__(self):
        msg = super().__str__()
        if self.t is not None:
            return f"{msg} (t={self.t:.6g})"
        return msg


class DimensionMismatch(CoordkitError, ValueError):
    pass


class UnknownKind(CoordkitError, ValueError):
    pass


class MissingParam(CoordkitError, ValueError):
    pass


class NonPositiveParam(CoordkitError, ValueError):
    pass


class InadmissibleState(CoordkitError, ValueError):
    pass


class RankDeficientFields(CoordkitError):
    pass


class DegenerateGeometry(CoordkitError):
    pass


class InfeasibleSystem(CoordkitError):
    pass


class InfeasibleFollower(InfeasibleSystem):
    def __init__(self, message, vehicle=None):
        super().__init__(message)
        self.vehicle = vehicle


class NoFeasibleVirtualInput(CoordkitError):
    pass


class NotATree(CoordkitError, ValueError):
    pass


class ProjectionDiverged(CoordkitError):
    pass


class InitialStateInfeasible(CoordkitError):
    pass


class ExpressionError(CoordkitError, ValueError):
    """Evaluation of a time expression left its domain (tan pole, sqrt of a negative, ...)."""


class ParseError(CoordkitError, ValueError):
    def __init__(self, message, offset, expected=()):
        self.offset = offset
        self.expected = tuple(sorted(expected))
        detail = f"{message} at offset {offset}"
        if self.expected:
            detail += f"; expected one of: {', '.join(self.expected)}"
        super().__init__(detail)


class UnknownScenario(CoordkitError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class SchemaError(CoordkitError, ValueError):
    def __init__(self, message, path=()):
        self.path = tuple(path)
        where = "/".join(str(p) for p in self.path) or "<root>"
        super().__init__(f"{where}: {message}")


class InvalidParameter(CoordkitError, ValueError):
    """A constraint parameter left its admissible range (e.g. d_min >= d_max)."""
