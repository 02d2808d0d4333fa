"""
Step 2: Newton solve of the minimal surface BVP and the simulated DN map

    F(x', u, grad u, hess u) = 0 in Omega,   u = f on the boundary

Small-data regime only: boundary data are gated by the surrogate norm of
BoundaryField against delta. Newton starts from the discrete harmonic
extension of f, so the first iterate carries no boundary layer.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp
from pydantic import BaseModel, Field
from tqdm import tqdm

from minsurf_lab.config import (
    LINE_SEARCH_FACTOR,
    LINE_SEARCH_MAX_BACKTRACKS,
    LINEAR_SOLVE_RTOL,
    NEWTON_MAX_ITERATIONS,
    NEWTON_TOLERANCE,
    SMALL_DATA_BOUND,
)
from minsurf_lab.conformal_geometry import ConformalFactor, F_derivatives, eval_F
from minsurf_lab.exceptions import (
    AdmissibilityError,
    ConvergenceError,
    DomainError,
    LinearSolveError,
    SmallDataError,
)
from minsurf_lab.grid import BoundaryField, Grid, ScalarField, normal_derivative
from minsurf_lab.linear_algebra import solve_sparse
from minsurf_lab.residuals import surface_jet
from minsurf_lab.surfaces import Surface

logger = logging.getLogger(__name__)

QUADRATIC_TAIL_ONSET = 1e-4


# ============================================================================
# CONFIGURATION AND RESULTS
# ============================================================================

class NewtonConfig(BaseModel):
    """Newton iteration settings."""

    residual_tolerance: float = Field(NEWTON_TOLERANCE, gt=0, description="Sup-norm tolerance on the interior residual")
    max_iterations: int = Field(NEWTON_MAX_ITERATIONS, ge=1, description="Newton steps per continuation level")
    damping: float = Field(LINE_SEARCH_FACTOR, gt=0, lt=1, description="Backtracking factor of the line search")
    max_backtracks: int = Field(LINE_SEARCH_MAX_BACKTRACKS, ge=0, description="Backtracks before a step is declared stalled")
    continuation_steps: int = Field(4, ge=1, description="Amplitude ramps used when the direct solve fails")
    force_continuation: bool = Field(False, description="Skip the direct attempt and always ramp the data")
    small_data_bound: float = Field(SMALL_DATA_BOUND, gt=0, description="delta: admission bound on the surrogate norm of f")
    require_admissible: bool = Field(True, description="Reject factors with nonzero d_n c or d_n^2 c at x_n = 0")
    linear_rtol: float = Field(LINEAR_SOLVE_RTOL, gt=0, description="Relative residual contract of each linear solve")


@dataclass
class SolveResult:
    """Converged solution plus Newton diagnostics."""
    u: ScalarField
    iterations: int
    residual_history: List[float]
    converged: bool
    continuation_levels: int = 1
    min_pivot_ratio: float = float("nan")
    near_singular: bool = False

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else float("nan")

    @property
    def tail_constant(self) -> float:
        """Largest r_{k+1} / r_k^2 over steps that start below the quadratic-tail onset."""
        r = np.asarray(self.residual_history, dtype=float)
        ratios = [
            r[k + 1] / r[k] ** 2
            for k in range(len(r) - 1)
            if 0 < r[k] <= QUADRATIC_TAIL_ONSET
        ]
        return float(max(ratios)) if ratios else float("nan")


@dataclass
class DNRecord:
    """Boundary data f together with the simulated response d_nu u_f."""
    f: BoundaryField
    response: BoundaryField
    amplitude: float
    scenario: str
    solve: Optional[SolveResult] = field(default=None, repr=False)

    def to_frame(self) -> pd.DataFrame:
        """One row per boundary facet entry: node, coordinates, normal axis, f and response."""
        facets = self.f.grid.facets
        frame = pd.DataFrame({"node": facets.nodes, "axis": facets.axis, "side": facets.side})
        for k in range(self.f.grid.dim):
            frame[f"x{k + 1}"] = facets.points[:, k]
        for name, values in (("f", self.f.values), ("response", self.response.values)):
            if np.iscomplexobj(values):
                frame[f"{name}_re"], frame[f"{name}_im"] = values.real, values.imag
            else:
                frame[name] = values
        return frame


# ============================================================================
# NEWTON ITERATION
# ============================================================================

def boundary_from_shape(grid: Grid, shape: Surface, amplitude: float = 1.0) -> BoundaryField:
    """Boundary trace of amplitude * shape."""
    return BoundaryField.from_function(grid, lambda x: amplitude * shape(x))


def interior_residual(c: ConformalFactor, u: ScalarField) -> np.ndarray:
    """Discrete graph-form residual F at the interior nodes."""
    jet, grid = surface_jet(u)
    return eval_F(c, jet)[grid.interior_nodes]


def assemble_jacobian(c: ConformalFactor, u: ScalarField) -> sp.csr_matrix:
    """
    Exact Jacobian of the discrete residual with respect to interior values:
        diag(F_u) + sum_k diag(F_pk) D_k + sum_{k,l} diag(F_Pkl) D_kl
    restricted to interior rows and columns.
    """
    jet, grid = surface_jet(u)
    derivs = F_derivatives(c, jet)
    d = grid.dim
    J = sp.diags(derivs.du)
    for k in range(d):
        J = J + sp.diags(derivs.dp[:, k]) @ grid.first_derivative(k)
        for l in range(k, d):
            weight = derivs.dP[:, k, l] if k == l else derivs.dP[:, k, l] + derivs.dP[:, l, k]
            J = J + sp.diags(weight) @ grid.second_derivative(k, l)
    interior = grid.interior_nodes
    return J.tocsr()[interior][:, interior]


def harmonic_extension(grid: Grid, full: np.ndarray, rtol: float = LINEAR_SOLVE_RTOL) -> np.ndarray:
    """Full-grid vector with the boundary values of `full` and a discrete harmonic interior."""
    interior, boundary = grid.interior_nodes, grid.boundary_nodes
    rows = grid.laplacian()[interior]
    values = np.array(full, dtype=float)
    rhs = -(rows[:, boundary] @ values[boundary])
    values[interior], _ = solve_sparse(rows[:, interior], rhs, rtol=rtol)
    return values


@dataclass
class _NewtonState:
    values: np.ndarray
    history: List[float]
    iterations: int
    converged: bool
    min_pivot_ratio: float
    near_singular: bool


def _newton(c: ConformalFactor, grid: Grid, start: np.ndarray, cfg: NewtonConfig) -> _NewtonState:
    """
    Damped Newton from `start`. Convergence is judged on the sup-norm of the
    residual; the line search accepts the first step that decreases its l2 norm.
    """
    interior = grid.interior_nodes
    values = start.astype(float).copy()
    residual = interior_residual(c, ScalarField(grid, values))
    history = [float(np.max(np.abs(residual)))]
    merit = float(np.linalg.norm(residual))
    pivots: List[float] = []
    near_singular = False

    for iteration in range(cfg.max_iterations + 1):
        if history[-1] <= cfg.residual_tolerance:
            return _NewtonState(values, history, iteration, True, min(pivots, default=float("nan")), near_singular)
        if iteration == cfg.max_iterations:
            break

        jacobian = assemble_jacobian(c, ScalarField(grid, values))
        step, info = solve_sparse(jacobian, -residual, rtol=cfg.linear_rtol)
        pivots.append(info.pivot_ratio)
        near_singular = near_singular or info.near_singular

        t = 1.0
        for _ in range(cfg.max_backtracks + 1):
            trial = values.copy()
            trial[interior] += t * step
            try:
                trial_residual = interior_residual(c, ScalarField(grid, trial))
                trial_merit = float(np.linalg.norm(trial_residual))
            except DomainError:
                trial_merit = float("inf")
            if trial_merit < merit:
                break
            t *= cfg.damping
        else:
            logger.debug("line search stalled at iteration %d (residual %.3e)", iteration, history[-1])
            break

        values, residual, merit = trial, trial_residual, trial_merit
        history.append(float(np.max(np.abs(residual))))
        logger.debug("newton %2d: residual %.3e (step length %.3g)", iteration + 1, history[-1], t)

    return _NewtonState(values, history, len(history) - 1, False, min(pivots, default=float("nan")), near_singular)


def _continuation(c: ConformalFactor, f: BoundaryField, cfg: NewtonConfig) -> SolveResult:
    grid = f.grid
    increment = harmonic_extension(grid, f.extend(), cfg.linear_rtol) / cfg.continuation_steps
    values = np.zeros(grid.size)
    histories: List[float] = []
    pivots: List[float] = []
    near_singular = False
    iterations = 0

    for level in range(1, cfg.continuation_steps + 1):
        state = _newton(c, grid, values + increment, cfg)
        histories.extend(state.history)
        pivots.append(state.min_pivot_ratio)
        near_singular = near_singular or state.near_singular
        iterations += state.iterations
        if not state.converged:
            raise ConvergenceError(
                f"Newton failed at continuation level {level}/{cfg.continuation_steps} "
                f"(residual {state.history[-1]:.3e})",
                residual_history=histories,
            )
        values = state.values

    return SolveResult(
        u=ScalarField(grid, values),
        iterations=iterations,
        residual_history=state.history,
        converged=True,
        continuation_levels=cfg.continuation_steps,
        min_pivot_ratio=float(np.nanmin(pivots)) if np.any(np.isfinite(pivots)) else float("nan"),
        near_singular=near_singular,
    )


def solve_mse(c: ConformalFactor, f: BoundaryField, cfg: Optional[NewtonConfig] = None) -> SolveResult:
    """
    Solve the discretized minimal surface equation with Dirichlet data f.

    Args:
        c: Admissible conformal factor
        f: Real boundary data within the small-data ball
        cfg: Newton settings (defaults when None)

    Returns:
        SolveResult with the converged field

    Raises:
        AdmissibilityError: c fails admissibility and cfg.require_admissible is set
        SmallDataError: surrogate norm of f exceeds cfg.small_data_bound
        ConvergenceError: Newton failed even with amplitude continuation
    """
    cfg = cfg or NewtonConfig()
    if cfg.require_admissible and not c.admissible:
        raise AdmissibilityError(f"scenario '{c.name}' is not admissible: d_n c or d_n^2 c nonzero at x_n = 0")
    if f.is_complex:
        raise DomainError("Dirichlet data must be real; split complex data into real and imaginary parts")
    norm = f.surrogate_norm()
    if norm > cfg.small_data_bound:
        raise SmallDataError(norm, cfg.small_data_bound)

    grid = f.grid
    if not cfg.force_continuation:
        try:
            state = _newton(c, grid, harmonic_extension(grid, f.extend(), cfg.linear_rtol), cfg)
        except LinearSolveError as e:
            logger.warning("⚠ direct Newton solve hit a singular system: %s", e)
            state = None
        if state is not None and state.converged:
            result = SolveResult(
                u=ScalarField(grid, state.values),
                iterations=state.iterations,
                residual_history=state.history,
                converged=True,
                min_pivot_ratio=state.min_pivot_ratio,
                near_singular=state.near_singular,
            )
            logger.debug("✓ converged in %d iterations (residual %.2e)", result.iterations, result.final_residual)
            return result
        logger.info("direct Newton solve did not converge, ramping data over %d levels", cfg.continuation_steps)

    result = _continuation(c, f, cfg)
    logger.debug("✓ converged with continuation (%d iterations)", result.iterations)
    return result


def solve_many(
    c: ConformalFactor,
    data: Sequence[BoundaryField],
    cfg: Optional[NewtonConfig] = None,
    workers: int = 1,
    desc: str = "forward solves",
) -> List[SolveResult]:
    """Independent forward solves, optionally on a thread pool; results keep the input order."""
    cfg = cfg or NewtonConfig()
    if workers <= 1 or len(data) <= 1:
        return [solve_mse(c, f, cfg) for f in tqdm(data, desc=desc, disable=None, leave=False)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(solve_mse, c, f, cfg) for f in data]
        return [future.result() for future in tqdm(futures, desc=desc, disable=None, leave=False)]


# ============================================================================
# DN MAP AND AMPLITUDE SWEEP
# ============================================================================

def dn_map(c: ConformalFactor, f: BoundaryField, cfg: Optional[NewtonConfig] = None) -> DNRecord:
    """
    Simulated Dirichlet-to-Neumann map f -> d_nu u_f.

    Args:
        c: Admissible conformal factor
        f: Boundary data
        cfg: Newton settings

    Returns:
        DNRecord with the normal-derivative response
    """
    result = solve_mse(c, f, cfg)
    return DNRecord(
        f=f,
        response=normal_derivative(result.u),
        amplitude=f.sup_norm(),
        scenario=c.name,
        solve=result,
    )


def amplitude_sweep(
    c: ConformalFactor,
    f_shape: BoundaryField,
    amplitudes: Sequence[float],
    cfg: Optional[NewtonConfig] = None,
) -> pd.DataFrame:
    """
    Solve for amplitude * f_shape over an ascending list of amplitudes.

    Args:
        c: Admissible conformal factor
        f_shape: Boundary shape
        amplitudes: Ascending amplitudes
        cfg: Newton settings

    Returns:
        DataFrame with columns amplitude, u_sup, ratio (= ||u||/||f||), iterations,
        final_residual, tail_constant, converged, error. The first failing
        amplitude is recorded and ends the sweep.
    """
    cfg = cfg or NewtonConfig()
    amplitudes = [float(a) for a in amplitudes]
    if any(b < a for a, b in zip(amplitudes, amplitudes[1:])):
        raise DomainError("amplitudes must be sorted ascending")

    shape_norm = f_shape.sup_norm()
    rows = []
    for amplitude in tqdm(amplitudes, desc=f"amplitude sweep ({c.name})", disable=None, leave=False):
        f = f_shape * amplitude
        try:
            result = solve_mse(c, f, cfg)
        except (SmallDataError, ConvergenceError, LinearSolveError) as e:
            logger.warning("⚠ contraction regime ends at amplitude %.4g: %s", amplitude, e)
            rows.append({
                "amplitude": amplitude, "u_sup": np.nan, "ratio": np.nan, "iterations": -1,
                "final_residual": np.nan, "tail_constant": np.nan, "converged": False, "error": str(e),
            })
            break
        u_sup = result.u.sup_norm()
        f_sup = amplitude * shape_norm
        rows.append({
            "amplitude": amplitude,
            "u_sup": u_sup,
            "ratio": u_sup / f_sup if f_sup > 0 else np.nan,
            "iterations": result.iterations,
            "final_residual": result.final_residual,
            "tail_constant": result.tail_constant,
            "converged": True,
            "error": "",
        })

    table = pd.DataFrame(rows)
    converged = table[table["converged"]]
    logger.info(
        "✓ amplitude sweep %s: %d/%d amplitudes converged, max ||u||/||f|| = %.4g",
        c.name, len(converged), len(amplitudes), converged["ratio"].max() if len(converged) else np.nan,
    )
    return table
