"""Exception types shared across the package."""


class QRobustError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(QRobustError):
    """Operands have incompatible shapes or dimensions."""


class NotHermitianError(QRobustError):
    """A matrix required to be Hermitian is not, beyond tolerance."""


class UnknownVariableError(QRobustError):
    """A statement references an undeclared quantum variable."""


class UnknownGateError(QRobustError):
    """A statement or definition references an unknown gate or channel."""


class QwSyntaxError(QRobustError):
    """Source text does not conform to the .qw grammar."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        super().__init__(f"{line}:{col}: {message}" if line else message)


class BudgetExceeded(QRobustError):
    """An evaluation exceeded its step or unrolling budget."""


class Infeasible(QRobustError):
    """The SDP (or its predicate constraint) admits no feasible point."""


class NumericalFailure(QRobustError):
    """An iterative numerical routine failed to reach its tolerance."""


class Unconverged(QRobustError):
    """A loop-dependent check is inconclusive at the available truncation."""


class SideConditionFailed(QRobustError):
    """A proof-rule side condition does not hold."""

    def __init__(self, condition: str, detail: str = ""):
        self.condition = condition
        super().__init__(f"{condition}" + (f": {detail}" if detail else ""))
