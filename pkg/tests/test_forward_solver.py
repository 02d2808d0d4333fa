"""
Tests for the Newton solver, the DN map and the amplitude sweep
"""
import numpy as np
import pytest

from minsurf_lab.conformal_geometry import build_scenario
from minsurf_lab.convergence import halving_ratios
from minsurf_lab.exceptions import AdmissibilityError, DomainError, SmallDataError
from minsurf_lab.forward_solver import (
    QUADRATIC_TAIL_ONSET,
    NewtonConfig,
    amplitude_sweep,
    boundary_from_shape,
    dn_map,
    harmonic_extension,
    solve_many,
    solve_mse,
)
from minsurf_lab.grid import BoundaryField, Domain, Grid
from minsurf_lab.surfaces import AffineSurface, ScherkSurface, shape_from_spec


def test_affine_data_flat_metric(flat, grid17):
    """For c = 1 the affine extension of affine data is the discrete solution."""
    shape = AffineSurface(slope=(0.01, -0.005), offset=0.01)
    f = boundary_from_shape(grid17, shape)
    result = solve_mse(flat, f)

    assert result.converged, "Newton must converge"
    assert result.iterations <= 8, f"{result.iterations} iterations"
    assert result.final_residual <= NewtonConfig().residual_tolerance, "residual above tolerance"
    assert np.allclose(result.u.values, shape(grid17.points), atol=1e-10), "solution must be affine"
    print(f"✓ Affine data solved in {result.iterations} iterations")


def test_constant_data_bump(bump, grid17):
    """Small constant data on an admissible factor stays close to the constant."""
    f = BoundaryField(grid17, np.full(len(grid17.facets), 0.02))
    result = solve_mse(bump, f)
    assert result.converged, "Newton must converge"
    assert np.max(np.abs(result.u.values - 0.02)) < 1e-3, "u must stay near the boundary constant"
    print("✓ Constant data on bump-cubic")


def test_solver_gates(flat, grid17):
    """Large data, non-admissible factors and complex data are rejected up front."""
    big = BoundaryField(grid17, np.ones(len(grid17.facets)))
    with pytest.raises(SmallDataError) as info:
        solve_mse(flat, big)
    assert info.value.norm > info.value.bound, "error must carry the norm and the bound"

    small = BoundaryField(grid17, np.full(len(grid17.facets), 0.01))
    with pytest.raises(AdmissibilityError):
        solve_mse(build_scenario("exp-normal", 3), small)
    with pytest.raises(DomainError):
        solve_mse(flat, BoundaryField(grid17, np.full(len(grid17.facets), 0.01 + 0.01j)))
    print("✓ Solver gates")


def test_solve_many_keeps_order(flat, grid17):
    """Threaded solves return results in input order."""
    data = [BoundaryField(grid17, np.full(len(grid17.facets), a)) for a in (0.0, 0.01, 0.02)]
    results = solve_many(flat, data, workers=2)
    assert [round(float(r.u.values[0]), 12) for r in results] == [0.0, 0.01, 0.02], "order lost"


def test_dn_map_of_affine_data(flat, grid17):
    """The DN response of affine data is the slope projected on the outward normal."""
    slope = np.array([0.01, 0.02])
    f = boundary_from_shape(grid17, AffineSurface(slope=tuple(slope), offset=0.0))
    record = dn_map(flat, f)
    expected = grid17.facets.normals @ slope
    assert np.allclose(record.response.values, expected, atol=1e-10), "DN response mismatch"

    frame = record.to_frame()
    assert len(frame) == len(grid17.facets), "one row per facet entry"
    assert {"node", "axis", "side", "x1", "x2", "f", "response"} <= set(frame.columns)
    print("✓ DN map of affine data")


def test_amplitude_sweep_records_regime_end(flat, grid17):
    """Converged amplitudes report ||u|| / ||f||; the first rejected one ends the sweep."""
    shape = boundary_from_shape(grid17, shape_from_spec("constant:1", 2))
    table = amplitude_sweep(flat, shape, [0.0, 0.01, 0.02, 1.0, 2.0])

    assert len(table) == 4, "sweep must stop at the first failure"
    assert table["converged"].tolist() == [True, True, True, False]
    assert np.allclose(table["ratio"].iloc[1:3], 1.0), "||u|| = ||f|| for constant data and c = 1"
    assert table["error"].iloc[-1] != "", "failure reason must be recorded"
    print("✓ Amplitude sweep")


def test_amplitude_sweep_requires_ascending(flat, grid17):
    shape = boundary_from_shape(grid17, shape_from_spec("constant:1", 2))
    with pytest.raises(DomainError):
        amplitude_sweep(flat, shape, [0.02, 0.01])


def test_harmonic_extension_keeps_boundary(grid17):
    """The start iterate carries f on the boundary and solves the discrete Laplace equation inside."""
    f = boundary_from_shape(grid17, shape_from_spec("harmonic:3", 2), 0.01)
    start = harmonic_extension(grid17, f.extend())
    assert np.allclose(start[grid17.boundary_nodes], f.extend()[grid17.boundary_nodes])
    laplacian = grid17.laplacian() @ start
    assert np.max(np.abs(laplacian[grid17.interior_nodes])) < 1e-9, "interior must be discrete harmonic"


@pytest.mark.slow
@pytest.mark.parametrize("nodes", [65, 129])
def test_newton_converges_directly_on_fine_grids(nodes):
    """Affine data near the small-data bound: no continuation, at most 8 steps, quadratic tail."""
    grid = Grid(Domain.cube(2), nodes)
    f = boundary_from_shape(grid, AffineSurface(slope=(0.02, 0.015), offset=0.01))
    assert f.sup_norm() == pytest.approx(0.045)
    for name in ("constant", "bump-cubic", "exp-profile", "gauss-profile"):
        result = solve_mse(build_scenario(name, 3), f)
        assert result.converged, f"{name}: Newton must converge"
        assert result.continuation_levels == 1, f"{name}: continuation was needed on {nodes}^2"
        assert result.iterations <= 8, f"{name}: {result.iterations} iterations on {nodes}^2"
        history = np.asarray(result.residual_history)
        onset = int(np.argmax(history <= QUADRATIC_TAIL_ONSET))
        assert len(history) - 1 - onset <= 4, f"{name}: slow tail {history.tolist()}"
    print(f"✓ Direct Newton on {nodes}^2")


@pytest.mark.slow
def test_scherk_surface_second_order():
    """The discrete solution with Scherk data converges to the exact surface at second order."""
    shape = ScherkSurface(scale=0.5)
    cfg = NewtonConfig(small_data_bound=10.0)
    flat = build_scenario("constant", 3)
    errors = []
    for nodes in (65, 129, 257):
        grid = Grid(Domain.cube(2), nodes)
        result = solve_mse(flat, boundary_from_shape(grid, shape), cfg)
        assert result.converged and result.continuation_levels == 1, f"{nodes}^2 needed continuation"
        errors.append(float(np.max(np.abs(result.u.values - shape(grid.points)))))
    ratios = halving_ratios(errors)
    assert np.all((ratios >= 3.5) & (ratios <= 4.5)), f"errors {errors}, ratios {ratios}"
    print(f"✓ Scherk halving ratios {np.round(ratios, 2).tolist()}")


def test_continuation_reaches_the_direct_solution(bump, grid33):
    """Ramping the data and solving directly end at the same discrete solution."""
    f = boundary_from_shape(grid33, AffineSurface(slope=(0.02, 0.01), offset=0.01))
    direct = solve_mse(bump, f)
    ramped = solve_mse(bump, f, NewtonConfig(force_continuation=True))
    assert ramped.continuation_levels == NewtonConfig().continuation_steps
    gap = float(np.max(np.abs(direct.u.values - ramped.u.values)))
    assert gap < 1e-9, f"solutions differ by {gap:.2e}"
    print(f"✓ Continuation and direct solve agree ({gap:.1e})")


def test_reflection_equivariance(bump, grid33):
    """bump-cubic is even in x1, so reflecting the data in x1 reflects the solution."""
    index = grid33.multi_index.copy()
    index[:, 0] = grid33.shape[0] - 1 - index[:, 0]
    mirror = np.ravel_multi_index(index.T, grid33.shape)

    left = solve_mse(bump, boundary_from_shape(grid33, AffineSurface(slope=(0.02, 0.01), offset=0.005)))
    right = solve_mse(bump, boundary_from_shape(grid33, AffineSurface(slope=(-0.02, 0.01), offset=0.005)))
    gap = float(np.max(np.abs(left.u.values[mirror] - right.u.values)))
    assert gap < 1e-9, f"reflected solutions differ by {gap:.2e}"


def test_forward_solve_four_dimensions():
    """n = 4: a 3-D base grid converges directly within 8 steps."""
    grid = Grid(Domain.cube(3), 9)
    f = boundary_from_shape(grid, AffineSurface(slope=(0.01, 0.01, 0.01), offset=0.01))
    result = solve_mse(build_scenario("bump-cubic", 4), f)
    assert result.converged and result.continuation_levels == 1
    assert result.iterations <= 8, f"{result.iterations} iterations"
    print(f"✓ n = 4 forward solve in {result.iterations} iterations")
