"""Exception hierarchy shared by every module of the package."""


class ASGLError(Exception):
    """Base class for all package errors."""


class EmptyPartition(ASGLError, ValueError):
    pass


class InvalidSize(ASGLError, ValueError):
    pass


class DimensionMismatch(ASGLError, ValueError):
    pass


class InvalidResponse(ASGLError, ValueError):
    pass


class SingularHessian(ASGLError, ArithmeticError):
    pass


class ProblemTooLarge(ASGLError, MemoryError):
    pass


class DegenerateWeight(ASGLError, ArithmeticError):
    """A shifted first-step coordinate cancelled to (numerically) zero."""


class NonFiniteObjective(ASGLError, ArithmeticError):
    pass


class IllPosed(ASGLError, ArithmeticError):
    """The unpenalized problem has no unique minimizer."""


class MaxIterations(ASGLError, RuntimeError):
    """Iteration budget exhausted.

    ``result`` carries the best iterate when one is available.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class InfeasibleScenario(ASGLError, ValueError):
    pass


class InsufficientRecoveries(ASGLError, ValueError):
    pass
