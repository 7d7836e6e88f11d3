"""Exception types shared across the package."""


class InfeasibleBoundError(ValueError):
    """An approximation-error bound cannot be met by the current model class.

    Attributes
    ----------
    min_residual : float
        The smallest achievable squared residual (Frobenius) at the point
        where infeasibility was detected.
    bound : float
        The squared bound that was requested.
    factor : str or None
        Name of the factor being updated when the bound failed, if any.
    """

    def __init__(self, message, min_residual=None, bound=None, factor=None):
        super().__init__(message)
        self.min_residual = min_residual
        self.bound = bound
        self.factor = factor


class TensorFileError(ValueError):
    """Raised for malformed or inconsistent tensor/block files."""
