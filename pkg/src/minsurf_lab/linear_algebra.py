"""
Sparse linear solves with an accuracy contract

Direct LU factorization (SuperLU) with iterative refinement; restarted
GMRES preconditioned by an incomplete LU factorization as fallback and for
large three-dimensional systems.
"""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from minsurf_lab.config import (
    DIRECT_SOLVE_MAX_UNKNOWNS,
    LINEAR_SOLVE_RTOL,
    NEAR_SINGULAR_PIVOT_RATIO,
)
from minsurf_lab.exceptions import LinearSolveError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinearSolveInfo:
    """Diagnostics of one linear solve."""
    method: str
    relative_residual: float
    pivot_ratio: float = float("nan")      # min |U_ii| / max |U_ii| of the LU factor
    near_singular: bool = False


def _relative_residual(A, x, b) -> float:
    norm_b = np.linalg.norm(b)
    return float(np.linalg.norm(b - A @ x) / norm_b) if norm_b > 0 else 0.0


def _solve_direct(A: sp.csc_matrix, b: np.ndarray, rtol: float):
    try:
        lu = spla.splu(A)
    except RuntimeError as e:
        raise LinearSolveError(f"sparse LU failed: {e}", condition_estimate=float("inf")) from e

    diag = np.abs(lu.U.diagonal())
    pivot_ratio = float(diag.min() / diag.max()) if diag.size and diag.max() > 0 else 0.0
    if not pivot_ratio > 0:
        raise LinearSolveError("discrete operator is singular", condition_estimate=float("inf"))

    x = lu.solve(b)
    residual = _relative_residual(A, x, b)
    for _ in range(2):                      # iterative refinement
        if residual <= rtol:
            break
        x = x + lu.solve(b - A @ x)
        residual = _relative_residual(A, x, b)
    return x, LinearSolveInfo(
        method="splu",
        relative_residual=residual,
        pivot_ratio=pivot_ratio,
        near_singular=pivot_ratio < NEAR_SINGULAR_PIVOT_RATIO,
    )


def _solve_krylov(A: sp.csc_matrix, b: np.ndarray, rtol: float, x0=None):
    ilu = spla.spilu(A, drop_tol=1e-5, fill_factor=20)
    M = spla.LinearOperator(A.shape, ilu.solve, dtype=A.dtype)
    x, info = spla.gmres(A, b, x0=x0, M=M, rtol=rtol, atol=0.0, restart=200, maxiter=50)
    residual = _relative_residual(A, x, b)
    if info != 0 and residual > rtol:
        logger.warning("⚠ GMRES stopped with info=%d at relative residual %.2e", info, residual)
    return x, LinearSolveInfo(method="gmres+ilu", relative_residual=residual)


def _solve_real(A: sp.csc_matrix, b: np.ndarray, rtol: float, method: str):
    if method == "auto":
        method = "direct" if A.shape[0] <= DIRECT_SOLVE_MAX_UNKNOWNS else "krylov"

    if method == "direct":
        x, info = _solve_direct(A, b, rtol)
        if info.relative_residual > rtol:
            logger.warning(
                "⚠ direct solve missed rtol (%.2e > %.2e), falling back to GMRES",
                info.relative_residual, rtol,
            )
            x, krylov = _solve_krylov(A, b, rtol, x0=x)
            info = LinearSolveInfo(
                method="splu+gmres",
                relative_residual=krylov.relative_residual,
                pivot_ratio=info.pivot_ratio,
                near_singular=info.near_singular,
            )
    else:
        x, info = _solve_krylov(A, b, rtol)
    return x, info


def solve_sparse(A: sp.spmatrix, b: np.ndarray, rtol: float = LINEAR_SOLVE_RTOL, method: str = "auto"):
    """
    Solve A x = b to relative residual rtol.

    Args:
        A: Square sparse matrix (real)
        b: Right-hand side (real or complex)
        rtol: Relative residual contract
        method: 'auto', 'direct' or 'krylov'

    Returns:
        Tuple of (solution, LinearSolveInfo)
    """
    A = sp.csc_matrix(A)
    b = np.asarray(b)
    if not np.any(b):
        return np.zeros_like(b), LinearSolveInfo(method="trivial", relative_residual=0.0)

    if np.iscomplexobj(b) and not np.iscomplexobj(A.data):
        x_re, info_re = _solve_real(A, b.real.copy(), rtol, method)
        x_im, info_im = _solve_real(A, b.imag.copy(), rtol, method)
        x = x_re + 1j * x_im
        info = LinearSolveInfo(
            method=info_re.method,
            relative_residual=_relative_residual(A, x, b),
            pivot_ratio=info_re.pivot_ratio,
            near_singular=info_re.near_singular or info_im.near_singular,
        )
    else:
        x, info = _solve_real(A, b, rtol, method)

    if info.near_singular:
        logger.warning("⚠ near-singular operator: pivot ratio %.2e", info.pivot_ratio)
    if info.relative_residual > 100 * rtol:
        raise LinearSolveError(
            f"linear solve reached relative residual {info.relative_residual:.2e} > {rtol:.0e}",
            condition_estimate=1.0 / info.pivot_ratio if info.pivot_ratio > 0 else float("inf"),
        )
    return x, info
