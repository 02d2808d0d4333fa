"""
Shared fixtures: small base grids and catalog conformal factors (n = 3)
"""
import pytest

from minsurf_lab.conformal_geometry import build_scenario
from minsurf_lab.grid import Domain, Grid


@pytest.fixture
def grid17():
    """17 x 17 grid on [-1, 1]^2."""
    return Grid(Domain.cube(2), 17)


@pytest.fixture
def grid33():
    """33 x 33 grid on [-1, 1]^2."""
    return Grid(Domain.cube(2), 33)


@pytest.fixture
def flat():
    return build_scenario("constant", 3)


@pytest.fixture
def bump():
    """e^(kappa x_1)(1 + alpha x_3^3 rho) with kappa = 0: c(x', 0) = 1."""
    return build_scenario("bump-cubic", 3)


@pytest.fixture
def tilted_bump():
    """bump-cubic with a nonconstant c(x', 0), so the convection b is nonzero."""
    return build_scenario("bump-cubic", 3, kappa=0.3)
