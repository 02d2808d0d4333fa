"""
Tests for grids, difference operators and quadrature
"""
import numpy as np
import pytest

from minsurf_lab.exceptions import ConfigurationError, DomainError
from minsurf_lab.grid import (
    BoundaryField,
    Domain,
    Grid,
    ScalarField,
    gradient_fd,
    hessian_fd,
    integrate_boundary,
    integrate_interior,
    laplacian_fd,
    normal_derivative,
)


def _quadratic(x):
    return 1.0 + 0.5 * x[:, 0] - 0.25 * x[:, 1] + x[:, 0] ** 2 + 0.3 * x[:, 0] * x[:, 1] + 2.0 * x[:, 1] ** 2


def test_operators_exact_on_quadratics(grid17):
    """Second-order stencils, one-sided ones included, reproduce quadratics exactly."""
    u = ScalarField.from_function(grid17, _quadratic)
    x = grid17.points
    grad = gradient_fd(u)
    hess = hessian_fd(u)

    assert np.allclose(grad[:, 0], 0.5 + 2 * x[:, 0] + 0.3 * x[:, 1], atol=1e-12), "d/dx1 not exact"
    assert np.allclose(grad[:, 1], -0.25 + 0.3 * x[:, 0] + 4 * x[:, 1], atol=1e-12), "d/dx2 not exact"
    assert np.allclose(hess[:, 0, 1], 0.3, atol=1e-10), "mixed derivative not exact"
    assert np.allclose(laplacian_fd(u).values, 6.0, atol=1e-9), "Laplacian not exact"
    print("✓ Difference operators exact on quadratics")


def test_quadrature_measures(grid17):
    """Volume 4 and perimeter 8 of [-1, 1]^2."""
    ones = ScalarField.constant(grid17, 1.0)
    assert np.isclose(integrate_interior(ones), 4.0), "area of the square"
    assert np.isclose(grid17.boundary_measure, 8.0), "perimeter of the square"
    assert np.isclose(integrate_boundary(ones.trace()), 8.0), "boundary integral of 1"
    print("✓ Quadrature measures")


def test_divergence_theorem_discrete(grid17):
    """int Lap u = int d_nu u for u = x1^2 + x2^2 (both sides equal 16)."""
    u = ScalarField.from_function(grid17, lambda x: x[:, 0] ** 2 + x[:, 1] ** 2)
    interior = integrate_interior(laplacian_fd(u))
    boundary = integrate_boundary(normal_derivative(u))
    assert np.isclose(interior, 16.0), f"int Lap u = {interior}"
    assert np.isclose(boundary, 16.0), f"int d_nu u = {boundary}"
    print("✓ Discrete divergence theorem")


def test_normal_derivative_signs(grid17):
    """d_nu x1 is the x1-component of the outward normal on every facet."""
    u = ScalarField.from_function(grid17, lambda x: x[:, 0])
    assert np.allclose(normal_derivative(u).values, grid17.facets.normals[:, 0]), "outward normal sign"


def test_surrogate_norm(grid17):
    """Constants measure by their value; affine data by its largest value or slope."""
    constant = BoundaryField.from_function(grid17, lambda x: np.full(len(x), 0.3))
    affine = BoundaryField.from_function(grid17, lambda x: 0.5 + 0.5 * x[:, 0])
    assert np.isclose(constant.surrogate_norm(), 0.3), "constant surrogate norm"
    assert np.isclose(affine.surrogate_norm(), 1.0), "affine surrogate norm"
    print("✓ Surrogate norm")


def test_extend_keeps_boundary_values(grid17):
    """extend() puts Dirichlet values on boundary nodes and zeros inside."""
    f = BoundaryField.from_function(grid17, lambda x: 1.0 + x[:, 0] * x[:, 1])
    full = f.extend()
    x = grid17.points
    assert np.allclose(full[grid17.boundary_nodes], 1.0 + x[grid17.boundary_nodes, 0] * x[grid17.boundary_nodes, 1])
    assert np.all(full[grid17.interior_nodes] == 0.0), "interior must be zero"


def test_refine_halves_spacing(grid17):
    fine = grid17.refine()
    assert fine.shape == (33, 33), f"refined shape {fine.shape}"
    assert np.isclose(fine.h, grid17.h / 2), "spacing must halve"


def test_rejects_bad_inputs(grid17):
    """Undersized grids and non-finite values are refused."""
    with pytest.raises(ConfigurationError):
        Grid(Domain.cube(2), 5)
    with pytest.raises(DomainError):
        ScalarField(grid17, np.full(grid17.size, np.nan))
    with pytest.raises(DomainError):
        ScalarField(grid17, np.zeros(3))
