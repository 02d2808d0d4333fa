"""
Tests for the linearized operator, the adjoint weight, the integral identity
and divided differences of the solution map
"""
import numpy as np
import pytest
from pydantic import ValidationError

from minsurf_lab.conformal_geometry import build_scenario
from minsurf_lab.convergence import fitted_order
from minsurf_lab.exceptions import AdmissibilityError, ConfigurationError
from minsurf_lab.forward_solver import boundary_from_shape
from minsurf_lab.grid import BoundaryField, Domain, Grid, ScalarField, integrate_interior
from minsurf_lab.linearization import (
    EpsilonSchedule,
    LinearizedOperator,
    SolutionCache,
    adjoint_residual,
    adjoint_solution,
    boundary_interior_identity,
    divided_difference,
    eps_slope_table,
    solve_first_lin,
    solve_second_lin,
)
from minsurf_lab.surfaces import harmonic_polynomial


def _unit(f: BoundaryField) -> BoundaryField:
    return f * (1.0 / f.surrogate_norm())


def test_first_lin_reproduces_discrete_harmonics(bump, grid17):
    """With c(x', 0) = 1 the operator is the Laplacian, exact on x1^2 - x2^2."""
    shape = harmonic_polynomial(2)
    f = boundary_from_shape(grid17, shape)
    v = solve_first_lin(bump, f)
    assert np.allclose(v.values, shape(grid17.points), atol=1e-11), "harmonic extension mismatch"
    print("✓ First linearization on a discrete harmonic")


def test_adjoint_weight_second_order(tilted_bump):
    """L* v0 vanishes up to O(h^2): halving h divides the residual by about 4."""
    coarse = adjoint_residual(tilted_bump, Grid(Domain.cube(2), 17)).sup_norm()
    fine = adjoint_residual(tilted_bump, Grid(Domain.cube(2), 33)).sup_norm()
    assert coarse < 1e-2, f"coarse adjoint residual {coarse:.2e}"
    assert coarse / fine > 3.0, f"observed ratio {coarse / fine:.2f}"
    print(f"✓ Adjoint residual ratio {coarse / fine:.2f}")


def test_adjoint_solution_is_positive(tilted_bump, grid17):
    v0 = adjoint_solution(tilted_bump, grid17)
    assert np.all(v0.values > 0), "v0 must be positive"
    assert np.allclose(v0.values, np.exp(0.3 * grid17.points[:, 0])), "v0 = c(x', 0) for n = 3"


def test_operator_forms_agree(tilted_bump, grid33):
    """Convection and conductivity forms give the same first linearization up to O(h^2)."""
    f = boundary_from_shape(grid33, harmonic_polynomial(3))
    convection = solve_first_lin(tilted_bump, f, form="convection")
    conductivity = solve_first_lin(tilted_bump, f, form="conductivity")
    gap = (convection - conductivity).sup_norm()
    assert gap < 5e-3, f"forms differ by {gap:.2e}"
    print(f"✓ Operator forms agree ({gap:.2e})")


def test_boundary_interior_identity(bump, grid33):
    """int v0 d_nu w = int t v0 v_l v_a for constant data, where int t = 3 int rho."""
    ones = BoundaryField(grid33, np.ones(len(grid33.facets)))
    v = solve_first_lin(bump, ones)
    check = boundary_interior_identity(bump, v, v)
    expected = 3.0 * 2.0 * np.pi * 0.35 ** 2
    assert np.isclose(np.real(check.rhs), expected, rtol=2e-2), f"rhs {check.rhs}"
    assert check.residual < 1e-2, f"identity residual {check.residual:.2e}"
    print(f"✓ Boundary-interior identity residual {check.residual:.2e}")


def test_divided_differences_match_linearizations(bump, grid17):
    """First and second divided differences approximate v and w to O(eps^2)."""
    ones = BoundaryField(grid17, np.ones(len(grid17.facets)))
    f = _unit(boundary_from_shape(grid17, harmonic_polynomial(2)))
    cache = SolutionCache(bump)

    dd1 = divided_difference(bump, [f], 0.02, cache=cache)
    v = solve_first_lin(bump, f)
    assert (dd1.interior - v).sup_norm() < 1e-3, "dd1 far from v"

    dd2 = divided_difference(bump, [ones, ones], 0.02, cache=cache)
    w = solve_second_lin(bump, solve_first_lin(bump, ones), solve_first_lin(bump, ones))
    error = (dd2.interior - w).sup_norm() / w.sup_norm()
    assert dd2.solves == 3, f"repeated directions need 3 stencil nodes, got {dd2.solves}"
    assert error < 1e-2, f"dd2 relative error {error:.2e}"
    print(f"✓ Divided differences (dd2 relative error {error:.2e})")


def test_solution_cache_reuses_solves(bump, grid17):
    """A repeated stencil costs no new forward solves."""
    ones = BoundaryField(grid17, np.ones(len(grid17.facets)))
    cache = SolutionCache(bump)
    first = divided_difference(bump, [ones, ones], 0.01, cache=cache)
    second = divided_difference(bump, [ones, ones], 0.01, cache=cache)
    assert first.solves == 3 and second.solves == 0, "second pass must hit the cache"
    assert cache.hits >= 3, f"cache hits {cache.hits}"
    assert np.array_equal(first.interior.values, second.interior.values)


def test_eps_slope_table_columns(bump, grid17):
    ones = BoundaryField(grid17, np.ones(len(grid17.facets)))
    reference = solve_first_lin(bump, ones)
    table = eps_slope_table(bump, [ones], reference, EpsilonSchedule(levels=[0.02, 0.01, 0.005]))
    assert list(table.columns) == ["eps", "error", "ratio", "order", "floor", "order_m"]
    assert len(table) == 3 and (table["order_m"] == 1).all()


def test_schedule_validation(grid17):
    """Levels must descend, and stencils must stay inside the small-data ball."""
    with pytest.raises(ValidationError):
        EpsilonSchedule(levels=[0.01, 0.02])
    big = BoundaryField(grid17, np.ones(len(grid17.facets)))
    with pytest.raises(ConfigurationError):
        EpsilonSchedule(levels=[0.04]).check_within([big, big])


def test_operator_requires_admissible_factor(grid17):
    with pytest.raises(AdmissibilityError):
        LinearizedOperator(build_scenario("exp-normal", 3), grid17)


def test_pairing_gap_vanishes_for_compact_test_functions(tilted_bump, grid17):
    """Summation by parts: int v L*phi = int phi L v when phi vanishes on the two outer layers."""
    op = LinearizedOperator(tilted_bump, grid17)
    points = grid17.points
    v = ScalarField(grid17, np.exp(points[:, 0]) * (1.0 + points[:, 1] ** 2))
    index = grid17.multi_index
    inner = np.all((index >= 2) & (index <= grid17.shape[0] - 3), axis=1)
    phi = ScalarField(grid17, inner * np.exp(-np.sum(points ** 2, axis=1) / 0.2))

    gap = op.pairing_gap(v, phi)
    scale = abs(integrate_interior(ScalarField(grid17, phi.values * op.apply(v).values)))
    assert scale > 1e-3, f"L v must not vanish against phi ({scale:.2e})"
    assert gap <= 1e-10 * scale, f"pairing gap {gap:.2e} against {scale:.2e}"
    print(f"✓ Pairing gap {gap:.1e}")


def test_adjoint_apply_annihilates_the_weight_to_second_order():
    """n = 4: L* v0 decays like h^2 on 9^3 and 17^3 grids."""
    c = build_scenario("bump-cubic", 4, kappa=0.3)
    steps, residuals = [], []
    for nodes in (9, 17):
        grid = Grid(Domain.cube(3), nodes)
        steps.append(grid.h)
        residuals.append(adjoint_residual(c, grid).sup_norm())
    order = fitted_order(steps, residuals)
    assert order > 1.6, f"observed order {order:.2f} from {residuals}"
    print(f"✓ n = 4 adjoint residual order {order:.2f}")


def test_first_lin_four_dimensions():
    """n = 4 with c(x', 0) = 1: the first linearization reproduces the discrete harmonic x1 x2."""
    grid = Grid(Domain.cube(3), 9)
    c = build_scenario("bump-cubic", 4)
    f = BoundaryField.from_function(grid, lambda x: x[..., 0] * x[..., 1])
    v = solve_first_lin(c, f)
    assert np.allclose(v.values, grid.points[:, 0] * grid.points[:, 1], atol=1e-11), "x1 x2 is discrete harmonic"
