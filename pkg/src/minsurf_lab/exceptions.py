"""
Error hierarchy shared by all lab modules
"""
from typing import List, Optional


class MinsurfError(Exception):
    """Base class for every error raised by the lab."""


class ConfigurationError(MinsurfError, ValueError):
    """Invalid grid, schedule, catalog id or experiment setting."""


class DomainError(MinsurfError, ValueError):
    """Input outside the mathematical domain of an operation."""


class AdmissibilityError(DomainError):
    """Conformal factor violates dc/dx_n(x', 0) = d2c/dx_n2(x', 0) = 0."""


class SmallDataError(MinsurfError, ValueError):
    """Boundary data outside the small-data regime."""

    def __init__(self, norm: float, bound: float):
        self.norm = norm
        self.bound = bound
        super().__init__(
            f"small-data regime: surrogate norm {norm:.3e} exceeds bound {bound:.3e}"
        )


class ConvergenceError(MinsurfError):
    """Newton iteration failed, even after amplitude continuation."""

    def __init__(self, message: str, residual_history: Optional[List[float]] = None):
        self.residual_history = list(residual_history or [])
        super().__init__(message)


class LinearSolveError(MinsurfError):
    """Sparse linear solve was singular or missed its accuracy contract."""

    def __init__(self, message: str, condition_estimate: float = float("nan")):
        self.condition_estimate = condition_estimate
        super().__init__(f"{message} (condition estimate {condition_estimate:.3e})")


class CGOError(MinsurfError):
    """Complex geometric optics construction failed on the given grid."""
