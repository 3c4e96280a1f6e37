"""Exception hierarchy shared by every crfol module."""


class CRFolError(Exception):
    """Base class for all errors raised by crfol."""


class ExpressionSyntaxError(CRFolError, ValueError):
    def __init__(self, message, position=None, text=None):
        self.position = position
        self.text = text
        where = "" if position is None else f" at position {position}"
        super().__init__(f"{message}{where}")


class UnknownVariable(CRFolError, ValueError):
    pass


class DivisionNearZero(CRFolError, ArithmeticError):
    pass


class NotRealValued(CRFolError, ValueError):
    pass


class RankDefect(CRFolError):
    pass


class NewtonDiverged(CRFolError):
    pass


class NDimensionDefect(CRFolError):
    """The lifting system has rank < m, so lifts are not unique."""


class Inconsistent(CRFolError):
    """The lifting system has no solution for the requested horizontal vector."""


class NotHorizontal(CRFolError, ValueError):
    pass


class FrameDiscontinuity(CRFolError):
    pass


class TypeDefect(CRFolError):
    pass


class CombinatorialBudget(CRFolError):
    pass


class BasisDegenerate(CRFolError):
    pass


class NonRealLift(CRFolError):
    pass


class StepRejected(CRFolError):
    pass


class MeshTooCoarse(CRFolError):
    pass


class NotTangent(CRFolError, ValueError):
    """A vector that should be tangent to S is not."""


class PathMismatch(CRFolError, ValueError):
    """A path does not start at the seed or a loop does not close."""


class NormalizerVanishes(CRFolError):
    pass


class WrongCodimension(CRFolError):
    pass


class ProblemFileError(CRFolError, ValueError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(f"{message}{where}")


class MissingKey(ProblemFileError):
    pass
