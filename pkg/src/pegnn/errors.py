"""Exception hierarchy shared across the package."""


class PegError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(PegError, ValueError):
    pass


class LengthMismatch(ShapeMismatch):
    pass


class IsolatedNode(PegError, ValueError):
    pass


class TooLarge(PegError, ValueError):
    pass


class NotSymmetric(PegError, ValueError):
    pass


class ConvergenceFailure(PegError, RuntimeError):
    pass


class BadDimension(PegError, ValueError):
    pass


class TooFewEigenvalues(PegError, ValueError):
    pass


class MultipleEigenvalues(PegError, ValueError):
    pass


class EpsTooLarge(PegError, ValueError):
    pass


class ZeroEigengap(PegError, ValueError):
    pass


class UnboundedPhi(PegError, ValueError):
    pass


class NotEnoughEdges(PegError, ValueError):
    pass


class NegativeSamplingExhausted(PegError, RuntimeError):
    pass


class SingleClass(PegError, ValueError):
    pass


class TooFewNegatives(PegError, ValueError):
    pass


class WidthMismatch(PegError, ValueError):
    pass


class ParseError(PegError, ValueError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class FeatureRowMismatch(PegError, ValueError):
    pass


class IndexOutOfRange(PegError, IndexError):
    pass


class MultipleEigenvalueWarning(UserWarning):
    """lambda_p and lambda_{p+1} coincide, so the eigenmap is only defined up to O(p)."""


class DuplicateEdgeWarning(UserWarning):
    pass


class DidNotConverge(UserWarning):
    pass
