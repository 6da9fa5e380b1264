"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Input arrays have incompatible or unsupported shapes."""


class NumericalError(ArithmeticError):
    """A factorization or solve failed or would produce non-finite values."""


class InfeasibleProjectionError(ValueError):
    """The spectrum projection has no usable (non-degenerate) weight."""
