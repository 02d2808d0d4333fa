"""
Tikhonov-regularized least squares with the discrepancy principle
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from minsurf_lab.config import DISCREPANCY_TAU
from minsurf_lab.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

LOG_ALPHA_BOUNDS = (-16.0, 4.0)
LOG_ALPHA_TOLERANCE = 0.05


@dataclass(frozen=True)
class TikhonovResult:
    x: np.ndarray
    alpha: float
    residual: float          # ||A x - y||
    condition: float         # 2-norm condition number of A
    method: str              # 'fixed' or 'discrepancy'


def tikhonov_solve(A: np.ndarray, y: np.ndarray, alpha: float) -> np.ndarray:
    """
    Minimize ||A x - y||^2 + alpha ||x||^2 through the stacked system

        [A; sqrt(alpha) I] x = [y; 0]

    Args:
        A: System matrix, shape (m, k), real or complex
        y: Data, shape (m,)
        alpha: Regularization parameter >= 0

    Returns:
        Minimizer x, shape (k,)
    """
    if alpha < 0:
        raise ConfigurationError(f"alpha must be non-negative, got {alpha}")
    A = np.asarray(A)
    y = np.asarray(y)
    k = A.shape[1]
    stacked = np.vstack([A, np.sqrt(alpha) * np.eye(k)])
    rhs = np.concatenate([y, np.zeros(k, dtype=y.dtype)])
    x, _, _, _ = np.linalg.lstsq(stacked, rhs, rcond=None)
    return x


def _residual(A: np.ndarray, y: np.ndarray, alpha: float) -> float:
    return float(np.linalg.norm(A @ tikhonov_solve(A, y, alpha) - y))


def discrepancy_alpha(
    A: np.ndarray,
    y: np.ndarray,
    noise_level: float,
    tau: float = DISCREPANCY_TAU,
    bounds=LOG_ALPHA_BOUNDS,
    tolerance: float = LOG_ALPHA_TOLERANCE,
) -> float:
    """
    Largest alpha whose residual stays within tau * noise_level, by bisection
    over log10(alpha); the residual grows monotonically with alpha.

    Args:
        A: System matrix
        y: Data
        noise_level: Estimated ||noise||
        tau: Safety factor > 1
        bounds: log10 range searched
        tolerance: Bisection stops when the log10 bracket is this narrow

    Returns:
        alpha
    """
    if tau <= 1:
        raise ConfigurationError(f"tau must exceed 1, got {tau}")
    target = tau * noise_level
    lower, upper = bounds
    if _residual(A, y, 10.0 ** lower) > target:
        logger.warning("⚠ discrepancy %.2e unreachable, using alpha = 1e%d", target, int(lower))
        return 10.0 ** lower
    if _residual(A, y, 10.0 ** upper) <= target:
        return 10.0 ** upper
    while upper - lower > tolerance:
        mid = 0.5 * (lower + upper)
        if _residual(A, y, 10.0 ** mid) <= target:
            lower = mid
        else:
            upper = mid
    return 10.0 ** lower


def regularized_inverse(
    A: np.ndarray,
    y: np.ndarray,
    alpha: Optional[float] = None,
    noise_level: float = 0.0,
    tau: float = DISCREPANCY_TAU,
) -> TikhonovResult:
    """
    Tikhonov solve with a fixed alpha, or with alpha from the discrepancy principle.

    Args:
        A: System matrix
        y: Data
        alpha: Fixed parameter (None selects by the discrepancy principle)
        noise_level: ||noise|| estimate used by the discrepancy principle
        tau: Discrepancy safety factor

    Returns:
        TikhonovResult
    """
    A = np.asarray(A)
    method = "fixed"
    if alpha is None:
        alpha = discrepancy_alpha(A, y, noise_level, tau) if noise_level > 0 else 0.0
        method = "discrepancy"
    x = tikhonov_solve(A, y, alpha)
    result = TikhonovResult(
        x=x,
        alpha=float(alpha),
        residual=float(np.linalg.norm(A @ x - y)),
        condition=float(np.linalg.cond(A)),
        method=method,
    )
    logger.info(
        "✓ Tikhonov (%s): alpha = %.3e, residual = %.3e, cond(A) = %.3e",
        method, result.alpha, result.residual, result.condition,
    )
    return result
