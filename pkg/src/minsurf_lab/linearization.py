"""
Step 3: First and second linearizations at u = 0, the adjoint weight, and
divided-difference extraction of linearizations from the nonlinear solver

Linearized operator at u = 0 for an admissible factor:

    L v = Lap v + b . grad v,    b = (n-1) grad' c(x', 0) / (2 c(x', 0))
        = div(gamma grad v) / gamma,    gamma = c(x', 0)^((n-1)/2)

Formal adjoint: L* phi = Lap phi - div(phi b), solved by v0 = gamma.
"""
import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp
from pydantic import BaseModel, Field, field_validator

from minsurf_lab.config import EPS_LEVELS, REMAINDER_EPS, SMALL_DATA_BOUND
from minsurf_lab.conformal_geometry import ConformalFactor, eval_F
from minsurf_lab.convergence import noise_floor, slope_table
from minsurf_lab.exceptions import AdmissibilityError, ConfigurationError, DomainError
from minsurf_lab.forward_solver import NewtonConfig, solve_many
from minsurf_lab.grid import (
    BoundaryField,
    Grid,
    ScalarField,
    integrate_boundary,
    integrate_interior,
    normal_derivative,
)
from minsurf_lab.linear_algebra import solve_sparse
from minsurf_lab.residuals import surface_jet

logger = logging.getLogger(__name__)

FORMS = ("convection", "conductivity")


# ============================================================================
# LINEARIZED OPERATOR
# ============================================================================

def interior_blocks(grid: Grid, matrix: sp.spmatrix):
    """(interior-interior, interior-boundary) blocks of a full-grid operator."""
    rows = sp.csr_matrix(matrix)[grid.interior_nodes]
    return rows[:, grid.interior_nodes].tocsc(), rows[:, grid.boundary_nodes].tocsr()


def dirichlet_solve(
    grid: Grid,
    blocks,
    boundary: Optional[BoundaryField] = None,
    source: Optional[np.ndarray] = None,
) -> ScalarField:
    """Solve A v = source at interior nodes with Dirichlet values on the boundary nodes."""
    interior_block, boundary_block = blocks
    values = boundary.extend() if boundary is not None else np.zeros(grid.size)
    if source is None:
        source = np.zeros(grid.size)
    I, B = grid.interior_nodes, grid.boundary_nodes
    rhs = source[I] - boundary_block @ values[B]
    interior_values, _ = solve_sparse(interior_block, rhs)
    values = values.astype(np.result_type(values, interior_values))
    values[I] = interior_values
    return ScalarField(grid, values)


class LinearizedOperator:
    """
    Discrete first linearization of F at u = 0 on a grid.

    Args:
        c: Admissible conformal factor
        grid: Grid of the base domain
    """

    def __init__(self, c: ConformalFactor, grid: Grid):
        if not c.admissible:
            raise AdmissibilityError(f"scenario '{c.name}' is not admissible")
        self.factor = c
        self.grid = grid
        self._blocks: Dict[str, tuple] = {}

    @property
    def n_equals_3(self) -> bool:
        return self.factor.dimension == 3

    @cached_property
    def base_value(self) -> np.ndarray:
        """c(x', 0) at every node"""
        return self.factor.base_value(self.grid.points)

    @cached_property
    def convection(self) -> np.ndarray:
        """b(x') at every node, shape (size, d)"""
        n = self.factor.dimension
        return (n - 1) * self.factor.base_gradient(self.grid.points) / (2.0 * self.base_value[:, None])

    @cached_property
    def conductivity(self) -> np.ndarray:
        """gamma = c(x', 0)^((n-1)/2); for n = 3 this is c(x', 0) itself."""
        return self.base_value ** ((self.factor.dimension - 1) / 2.0)

    @cached_property
    def convection_matrix(self) -> sp.csr_matrix:
        L = self.grid.laplacian()
        for k in range(self.grid.dim):
            L = L + sp.diags(self.convection[:, k]) @ self.grid.first_derivative(k)
        return L.tocsr()

    @cached_property
    def conductivity_matrix(self) -> sp.csr_matrix:
        """Conservative flux form div(gamma grad v) / gamma with gamma at cell midpoints."""
        grid = self.grid
        n = self.factor.dimension
        rows, cols, vals = [], [], []
        interior = grid.interior_nodes
        strides = np.cumprod((1,) + grid.shape[::-1][:-1])[::-1]
        for a in range(grid.dim):
            h = grid.spacing[a]
            offset = np.zeros(grid.dim)
            offset[a] = 0.5 * h
            points = grid.points[interior]
            gamma_plus = self.factor.base_value(points + offset) ** ((n - 1) / 2.0)
            gamma_minus = self.factor.base_value(points - offset) ** ((n - 1) / 2.0)
            gamma_center = self.conductivity[interior]
            step = strides[a]
            rows += [interior, interior, interior]
            cols += [interior + step, interior, interior - step]
            vals += [
                gamma_plus / (h * h * gamma_center),
                -(gamma_plus + gamma_minus) / (h * h * gamma_center),
                gamma_minus / (h * h * gamma_center),
            ]
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(grid.size, grid.size),
        )

    @cached_property
    def adjoint_matrix(self) -> sp.csr_matrix:
        L = self.grid.laplacian()
        for k in range(self.grid.dim):
            L = L - self.grid.first_derivative(k) @ sp.diags(self.convection[:, k])
        return L.tocsr()

    def matrix(self, form: str = "convection") -> sp.csr_matrix:
        if form == "convection":
            return self.convection_matrix
        if form == "conductivity":
            return self.conductivity_matrix
        raise ConfigurationError(f"unknown operator form '{form}', expected one of {FORMS}")

    def apply(self, v: ScalarField, form: str = "convection") -> ScalarField:
        return ScalarField(self.grid, self.matrix(form) @ v.values)

    def adjoint_apply(self, phi: ScalarField) -> ScalarField:
        return ScalarField(self.grid, self.adjoint_matrix @ phi.values)

    def pairing_gap(self, v: ScalarField, phi: ScalarField) -> float:
        """|int v L*phi - int phi L v| over the interior; phi should vanish near the boundary."""
        interior = np.zeros(self.grid.size)
        interior[self.grid.interior_nodes] = 1.0
        lhs = integrate_interior(ScalarField(self.grid, interior * v.values * self.adjoint_apply(phi).values))
        rhs = integrate_interior(ScalarField(self.grid, interior * phi.values * self.apply(v).values))
        return float(abs(lhs - rhs))

    def dirichlet_solve(
        self,
        boundary: Optional[BoundaryField] = None,
        source: Optional[np.ndarray] = None,
        form: str = "convection",
    ) -> ScalarField:
        """
        Solve L v = source in the interior with v = boundary on the boundary.

        Args:
            boundary: Dirichlet data (zero when None)
            source: Right-hand side per node (zero when None)
            form: 'convection' or 'conductivity'

        Returns:
            ScalarField (complex when data or source are complex)
        """
        if form not in self._blocks:
            self._blocks[form] = interior_blocks(self.grid, self.matrix(form))
        return dirichlet_solve(self.grid, self._blocks[form], boundary, source)


def _operator(c: ConformalFactor, grid: Grid, op: Optional[LinearizedOperator]) -> LinearizedOperator:
    if op is not None and op.factor is c and op.grid is grid:
        return op
    return LinearizedOperator(c, grid)


# ============================================================================
# LINEARIZED SOLVES AND THE ADJOINT WEIGHT
# ============================================================================

def solve_first_lin(
    c: ConformalFactor,
    f_l: BoundaryField,
    form: str = "convection",
    op: Optional[LinearizedOperator] = None,
) -> ScalarField:
    """First linearization: L v = 0, v = f_l on the boundary."""
    return _operator(c, f_l.grid, op).dirichlet_solve(boundary=f_l, form=form)


def adjoint_solution(c: ConformalFactor, grid: Grid) -> ScalarField:
    """v0 = c(x', 0)^((n-1)/2), a positive solution of L* v0 = 0."""
    return ScalarField(grid, c.base_value(grid.points) ** ((c.dimension - 1) / 2.0))


def adjoint_residual(c: ConformalFactor, grid: Grid) -> ScalarField:
    """Discrete L* v0 at interior nodes (zero on the boundary)."""
    op = LinearizedOperator(c, grid)
    values = np.array(op.adjoint_apply(adjoint_solution(c, grid)).values)
    values[grid.boundary_nodes] = 0.0
    return ScalarField(grid, values)


def second_lin_source(c: ConformalFactor, v_l: ScalarField, v_a: ScalarField) -> np.ndarray:
    """(n-1) / (2c) * d_n^3 c(x', 0) * v_l * v_a"""
    n = c.dimension
    points = v_l.grid.points
    weight = (n - 1) * c.normal_taylor_coefficient(points, 3) / (2.0 * c.base_value(points))
    return weight * v_l.values * v_a.values


def solve_second_lin(
    c: ConformalFactor,
    v_l: ScalarField,
    v_a: ScalarField,
    form: str = "convection",
    op: Optional[LinearizedOperator] = None,
) -> ScalarField:
    """
    Second linearization: L w = (n-1)/(2c) d_n^3 c(x', 0) v_l v_a, w = 0 on the boundary.

    Args:
        c: Admissible conformal factor
        v_l, v_a: First-linearization solutions on the same grid
        form: 'convection' or 'conductivity'
        op: Prebuilt operator to reuse

    Returns:
        ScalarField w
    """
    if v_l.grid is not v_a.grid:
        raise DomainError("v_l and v_a must live on the same grid")
    return _operator(c, v_l.grid, op).dirichlet_solve(source=second_lin_source(c, v_l, v_a), form=form)


class IdentityCheck(NamedTuple):
    lhs: complex
    rhs: complex
    residual: float


def _relative_gap(lhs: complex, rhs: complex) -> float:
    scale = max(abs(lhs), abs(rhs))
    return float(abs(lhs - rhs) / scale) if scale > 0 else 0.0


def boundary_interior_identity(
    c: ConformalFactor,
    v_l: ScalarField,
    v_a: ScalarField,
    w: Optional[ScalarField] = None,
) -> IdentityCheck:
    """
    Compare int_boundary v0 d_nu w dS with int_Omega (n-1)/(2c) d_n^3 c v0 v_l v_a dx'.

    Returns:
        IdentityCheck(lhs, rhs, relative residual)
    """
    grid = v_l.grid
    if w is None:
        w = solve_second_lin(c, v_l, v_a)
    v0 = adjoint_solution(c, grid)
    lhs = integrate_boundary(v0.trace() * normal_derivative(w))
    rhs = integrate_interior(ScalarField(grid, second_lin_source(c, v_l, v_a) * v0.values))
    return IdentityCheck(lhs, rhs, _relative_gap(lhs, rhs))


# ============================================================================
# DIVIDED DIFFERENCES OF THE SOLUTION MAP
# ============================================================================

class EpsilonSchedule(BaseModel):
    """Dyadic eps levels for central mixed divided differences."""

    levels: List[float] = Field(default_factory=lambda: list(EPS_LEVELS), description="eps levels, descending")
    amplitudes: List[float] = Field(default_factory=list, description="Base amplitude per direction (1 when empty)")
    order: int = Field(2, ge=1, description="Accuracy order of the central stencil")

    @field_validator("levels")
    @classmethod
    def _descending(cls, value: List[float]) -> List[float]:
        if not value or any(eps <= 0 for eps in value):
            raise ValueError("eps levels must be positive")
        if any(b >= a for a, b in zip(value, value[1:])):
            raise ValueError("eps levels must be strictly descending")
        return value

    def scaled(self, directions: Sequence[BoundaryField]) -> List[BoundaryField]:
        if not self.amplitudes:
            return list(directions)
        if len(self.amplitudes) != len(directions):
            raise ConfigurationError("one base amplitude per direction is required")
        return [f * a for f, a in zip(directions, self.amplitudes)]

    def check_within(self, directions: Sequence[BoundaryField], bound: float = SMALL_DATA_BOUND) -> None:
        """Every stencil node eps * sum(+-f_i) must stay inside the small-data ball."""
        directions = self.scaled(directions)
        worst = max(self.levels) * sum(f.surrogate_norm() for f in directions)
        if worst > bound:
            raise ConfigurationError(
                f"largest stencil node has surrogate norm up to {worst:.3e} > delta = {bound:.3e}; "
                "lower the eps levels or the direction amplitudes"
            )


class SolutionCache:
    """Forward solves memoized by their exact boundary data."""

    def __init__(self, c: ConformalFactor, cfg: Optional[NewtonConfig] = None, workers: int = 1):
        self.factor = c
        self.cfg = cfg or NewtonConfig()
        self.workers = workers
        self._fields: Dict[bytes, ScalarField] = {}
        self.hits = 0

    def __len__(self) -> int:
        return len(self._fields)

    def solve(self, data: Sequence[BoundaryField]) -> List[ScalarField]:
        keys = [f.values.tobytes() for f in data]
        missing: Dict[bytes, BoundaryField] = {}
        for key, f in zip(keys, data):
            if key in self._fields or key in missing:
                self.hits += 1
            else:
                missing[key] = f
        if missing:
            results = solve_many(self.factor, list(missing.values()), self.cfg, self.workers)
            for key, result in zip(missing, results):
                self._fields[key] = result.u
        return [self._fields[key] for key in keys]


@dataclass
class DividedDifference:
    """Central mixed divided difference of the solution and DN maps at eps = 0."""
    order: int
    eps: float
    interior: ScalarField
    response: BoundaryField
    solves: int = 0


def _unique_directions(directions: Sequence[BoundaryField]):
    unique: List[BoundaryField] = []
    slot = []
    for f in directions:
        for j, g in enumerate(unique):
            if g is f or np.array_equal(g.values, f.values):
                slot.append(j)
                break
        else:
            unique.append(f)
            slot.append(len(unique) - 1)
    return unique, slot


def divided_difference(
    c: ConformalFactor,
    directions: Sequence[BoundaryField],
    eps: float,
    cfg: Optional[NewtonConfig] = None,
    cache: Optional[SolutionCache] = None,
    workers: int = 1,
) -> DividedDifference:
    """
    Central mixed divided difference of order m = len(directions):

        dd = sum_{s in {-1,1}^m} (prod s_i) u(eps * sum_i s_i f_i) / (2 eps)^m

    Stencil nodes are grouped by the net multiplier of every distinct direction,
    so repeated directions reuse solves.

    Args:
        c: Admissible conformal factor
        directions: Boundary data f_1 ... f_m on one grid
        eps: Stencil step
        cfg: Newton settings
        cache: Shared solve cache (a private one when None)
        workers: Thread pool size for the forward solves

    Returns:
        DividedDifference with interior field and DN response
    """
    if not directions:
        raise ConfigurationError("at least one direction is required")
    grid = directions[0].grid
    cache = cache or SolutionCache(c, cfg, workers)
    unique, slot = _unique_directions(directions)
    m = len(directions)

    weights: Dict[tuple, float] = {}
    for signs in itertools.product((1, -1), repeat=m):
        multipliers = [0] * len(unique)
        for s, j in zip(signs, slot):
            multipliers[j] += s
        key = tuple(multipliers)
        weights[key] = weights.get(key, 0.0) + float(np.prod(signs))
    stencil = [(key, w) for key, w in sorted(weights.items()) if w != 0.0]

    data = []
    for key, _ in stencil:
        values = np.zeros(len(grid.facets))
        for multiplier, f in zip(key, unique):
            if multiplier:
                values = values + (multiplier * eps) * f.values
        data.append(BoundaryField(grid, values))

    before = len(cache)
    fields = cache.solve(data)
    total = np.zeros(grid.size)
    for (_, weight), u in zip(stencil, fields):
        total = total + weight * u.values
    interior = ScalarField(grid, total / (2.0 * eps) ** m)
    return DividedDifference(
        order=m,
        eps=eps,
        interior=interior,
        response=normal_derivative(interior),
        solves=len(cache) - before,
    )


def eps_slope_table(
    c: ConformalFactor,
    directions: Sequence[BoundaryField],
    reference: ScalarField,
    schedule: Optional[EpsilonSchedule] = None,
    cfg: Optional[NewtonConfig] = None,
    workers: int = 1,
) -> pd.DataFrame:
    """
    Sup-norm error of the order-m divided difference against a reference
    linearization for every eps level, with observed orders and the noise floor.
    """
    schedule = schedule or EpsilonSchedule()
    cfg = cfg or NewtonConfig()
    directions = schedule.scaled(directions)
    schedule.check_within(directions, cfg.small_data_bound)
    cache = SolutionCache(c, cfg, workers)
    errors = []
    for eps in schedule.levels:
        dd = divided_difference(c, directions, eps, cache=cache)
        errors.append((dd.interior - reference).sup_norm())
    table = slope_table(schedule.levels, errors, label="eps")
    m = len(directions)
    table["floor"] = [
        noise_floor(0.0, eps, m, cfg.residual_tolerance, c_grid=0.0, c_eps=0.0)
        for eps in schedule.levels
    ]
    table["order_m"] = m
    logger.info("✓ eps study m=%d on %s: errors %s", m, c.name, ", ".join(f"{e:.2e}" for e in errors))
    return table


# ============================================================================
# HIGHER-ORDER IDENTITY
# ============================================================================

@dataclass
class HigherOrderReport:
    """Boundary-data side of the order-m identity against its ground truth."""
    order: int
    eps: float
    boundary_functional: complex
    remainder_integral: complex
    recovered_top: complex
    exact_top: complex
    floor: float
    solves: int
    lower_orders: Dict[str, float] = field(default_factory=dict)

    @property
    def abs_error(self) -> float:
        return float(abs(self.recovered_top - self.exact_top))

    def to_dict(self) -> Dict[str, float]:
        def real(z):
            return float(np.real(z))
        return {
            "order": self.order,
            "eps": self.eps,
            "boundary_functional": real(self.boundary_functional),
            "remainder_integral": real(self.remainder_integral),
            "recovered_top": real(self.recovered_top),
            "exact_top": real(self.exact_top),
            "abs_error": self.abs_error,
            "floor": self.floor,
            "solves": self.solves,
        }


def _nonlinear_part(c: ConformalFactor, op: LinearizedOperator, u: np.ndarray) -> np.ndarray:
    """N(u) = F(u) + L u; its linearization at u = 0 vanishes."""
    field_u = ScalarField(op.grid, u)
    jet, _ = surface_jet(field_u)
    return eval_F(c, jet) + op.convection_matrix @ u


def numerical_remainder(
    c: ConformalFactor,
    lower: Dict[frozenset, ScalarField],
    m: int,
    eta: float = REMAINDER_EPS,
    op: Optional[LinearizedOperator] = None,
) -> ScalarField:
    """
    Order-m remainder d^m/d eta_1..d eta_m N_{c_m}(U(eta)) at eta = 0, where U is the
    multilinear polynomial built from the stored lower-order divided differences
    and c_m keeps the normal Taylor coefficients of c up to order m only.

    Args:
        c: Conformal factor
        lower: Divided difference per proper nonempty index subset of {0..m-1}
        m: Order
        eta: Step of the pointwise central stencil
        op: Prebuilt linearized operator

    Returns:
        ScalarField of the remainder (zero on the boundary)
    """
    grid = next(iter(lower.values())).grid if lower else None
    if grid is None:
        raise ConfigurationError("lower-order divided differences are required")
    op = _operator(c, grid, op)
    truncated = c.normal_truncation(m)
    total = np.zeros(grid.size)
    for signs in itertools.product((1, -1), repeat=m):
        U = np.zeros(grid.size)
        for subset, dd in lower.items():
            scale = float(np.prod([signs[i] for i in subset])) * eta ** len(subset)
            U = U + scale * dd.values
        total = total + float(np.prod(signs)) * _nonlinear_part(truncated, op, U)
    remainder = total / (2.0 * eta) ** m
    remainder[grid.boundary_nodes] = 0.0
    return ScalarField(grid, remainder)


def top_coefficient_weight(c: ConformalFactor, grid: Grid, m: int) -> np.ndarray:
    """(n-1)/(2c) d_n^(m+1) c(x', 0)"""
    n = c.dimension
    return (n - 1) * c.normal_taylor_coefficient(grid.points, m + 1) / (2.0 * c.base_value(grid.points))


def verify_higher_order(
    c: ConformalFactor,
    m: int,
    test_functions: Sequence[BoundaryField],
    eps: float,
    cfg: Optional[NewtonConfig] = None,
    workers: int = 1,
    remainder_eta: float = REMAINDER_EPS,
) -> HigherOrderReport:
    """
    Check int_boundary v0 d_nu (dd_m u) dS = int v0 [(n-1)/(2c) d_n^(m+1) c prod v_i + R_m] dx'.

    The remainder R_m is evaluated numerically from the divided differences
    of every proper subset of directions.

    Args:
        c: Admissible conformal factor
        m: Order, 3 <= m <= 5
        test_functions: m boundary directions, or one repeated m times
        eps: Divided-difference step
        cfg: Newton settings
        workers: Thread pool size
        remainder_eta: Pointwise stencil step of the remainder

    Returns:
        HigherOrderReport
    """
    if not 3 <= m <= 5:
        raise ConfigurationError(f"higher-order identity supports 3 <= m <= 5, got {m}")
    directions = list(test_functions)
    if len(directions) == 1:
        directions = directions * m
    if len(directions) != m:
        raise ConfigurationError(f"need {m} test functions (or one), got {len(directions)}")
    cfg = cfg or NewtonConfig()
    EpsilonSchedule(levels=[eps]).check_within(directions, cfg.small_data_bound)

    grid = directions[0].grid
    op = LinearizedOperator(c, grid)
    cache = SolutionCache(c, cfg, workers)
    lower: Dict[frozenset, ScalarField] = {}
    lower_errors: Dict[str, float] = {}
    for size in range(1, m):
        for subset in itertools.combinations(range(m), size):
            dd = divided_difference(c, [directions[i] for i in subset], eps, cache=cache)
            lower[frozenset(subset)] = dd.interior
    full = divided_difference(c, directions, eps, cache=cache)

    v0 = adjoint_solution(c, grid)
    boundary_functional = integrate_boundary(v0.trace() * full.response)
    remainder = numerical_remainder(c, lower, m, remainder_eta, op)
    remainder_integral = integrate_interior(remainder * v0)

    product = np.ones(grid.size)
    for f in directions:
        product = product * solve_first_lin(c, f, op=op).values
    exact_top = integrate_interior(ScalarField(grid, top_coefficient_weight(c, grid, m) * v0.values * product))
    for i in range(m):
        v = solve_first_lin(c, directions[i], op=op)
        lower_errors[f"dd1[{i}]"] = (lower[frozenset([i])] - v).sup_norm()

    report = HigherOrderReport(
        order=m,
        eps=eps,
        boundary_functional=boundary_functional,
        remainder_integral=remainder_integral,
        recovered_top=boundary_functional - remainder_integral,
        exact_top=exact_top,
        floor=noise_floor(grid.h, eps, m, cfg.residual_tolerance),
        solves=len(cache),
        lower_orders=lower_errors,
    )
    logger.info(
        "✓ order-%d identity on %s: recovered %.6e vs exact %.6e (floor %.1e, %d solves)",
        m, c.name, np.real(report.recovered_top), np.real(report.exact_top), report.floor, report.solves,
    )
    return report
