"""Exception hierarchy shared by all modules."""


class HodgeCLError(Exception):
    """Base class for every error raised by this package."""


class DuplicateSimplex(HodgeCLError, ValueError):
    pass


class MissingFace(HodgeCLError, ValueError):
    pass


class IndexOutOfRange(HodgeCLError, IndexError):
    pass


class DimensionMismatch(HodgeCLError, ValueError):
    pass


class NoConvergence(HodgeCLError, RuntimeError):
    pass


class NonFiniteActivation(HodgeCLError, FloatingPointError):
    pass


class TapeMismatch(HodgeCLError, ValueError):
    pass


class NonFiniteObjective(HodgeCLError, FloatingPointError):
    pass


class DegenerateVector(HodgeCLError, ValueError):
    pass


class DegenerateComponent(HodgeCLError, ValueError):
    pass


class EmptyNegatives(HodgeCLError, ValueError):
    pass


class AllZeroScores(HodgeCLError, ValueError):
    pass


class WeightDimensionMismatch(HodgeCLError, ValueError):
    pass


class BatchTooSmall(HodgeCLError, ValueError):
    pass


class InvalidHolePlacement(HodgeCLError, ValueError):
    pass


class NoPath(HodgeCLError, RuntimeError):
    pass


class ParseError(HodgeCLError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownLabel(HodgeCLError, ValueError):
    pass


class SingleClassInput(HodgeCLError, ValueError):
    pass


class InsufficientData(HodgeCLError, ValueError):
    pass


class NonFiniteLoss(HodgeCLError, FloatingPointError):
    pass
