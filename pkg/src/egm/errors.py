"""Exception types shared across the package."""


class EGMError(Exception):
    """Base class for all errors raised by this package."""


class NonFiniteError(EGMError, ValueError):
    """A NaN or Inf was about to enter the algebra."""


class GridTooSmall(EGMError, ValueError):
    pass


class GridMismatch(EGMError, ValueError):
    pass


class BadUnitVector(EGMError, ValueError):
    pass


class CoverageError(EGMError):
    """Preimage of a target grid leaves the source grid."""

    def __init__(self, message, uncovered_fraction=None):
        super().__init__(message)
        self.uncovered_fraction = uncovered_fraction


class QuadratureBudgetExceeded(EGMError):
    pass


class StepTooSmall(EGMError, ValueError):
    pass


class Divergence(EGMError):
    pass


class CFLViolation(EGMError, ValueError):
    pass


class RegionOutsideGrid(EGMError, ValueError):
    pass


class ConfigError(EGMError, ValueError):
    pass


class ParseError(EGMError, ValueError):
    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class NonFiniteValue(EGMError, ValueError):
    def __init__(self, message, node=None):
        if node is not None:
            message = f"{message} at node {node}"
        super().__init__(message)
        self.node = node
