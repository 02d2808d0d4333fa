"""
Tests for CGO frequency pairs, the Cauchy transform, phases and CGO solutions
"""
import numpy as np
import pytest

from minsurf_lab.cgo import (
    ALGEBRA_TOLERANCE,
    build_cgo_pair,
    cauchy_transform,
    cgo_exponent,
    cgo_resolution,
    drift_decays,
    fourier_probe,
    make_zeta_pair,
    phase_cancellation,
    remainder_sweep,
    xi_grid,
)
from minsurf_lab.config import CGO_RESOLUTION_BOUND
from minsurf_lab.conformal_geometry import build_scenario
from minsurf_lab.exceptions import CGOError, DomainError
from minsurf_lab.grid import Domain, Grid, ScalarField

SIGMA2 = 0.25


def _gaussian(x):
    return np.exp(-np.sum(x * x, axis=-1) / (2 * SIGMA2))


def _dbar_gaussian(x):
    """(d_1 + i d_2) of the Gaussian."""
    return -(x[..., 0] + 1j * x[..., 1]) / SIGMA2 * _gaussian(x)


def test_zeta_algebra():
    """zeta_j . zeta_j = 0 and zeta_1 + zeta_2 = i h xi in d = 2 and d = 3."""
    rng = np.random.default_rng(6)
    for d in (2, 3):
        for _ in range(50):
            xi = rng.uniform(-4, 4, size=d)
            h = rng.uniform(0.05, 1.9 / np.linalg.norm(xi))
            errors = make_zeta_pair(xi, h).algebra_errors()
            assert max(errors) <= ALGEBRA_TOLERANCE * max(1.0, np.linalg.norm(xi)), f"d={d}: {errors}"
    print("✓ Zeta algebra in d = 2 and d = 3")


def test_harmonic_exponential_pair_is_h_independent():
    """In d = 2, zeta / h does not depend on h."""
    xi = np.array([1.0, 2.0])
    a, b = make_zeta_pair(xi, 0.5), make_zeta_pair(xi, 0.1)
    assert np.allclose(a.zeta1 / a.h, b.zeta1 / b.h), "zeta1 / h changed with h"
    assert np.allclose(a.zeta2 / a.h, b.zeta2 / b.h), "zeta2 / h changed with h"


def test_opposite_frequencies_conjugate_pairs():
    """For d = 3 the pair built for -xi is the conjugate of the pair built for xi."""
    xi = np.array([1.0, -2.0, 0.5])
    plus, minus = make_zeta_pair(xi, 0.3), make_zeta_pair(-xi, 0.3)
    assert np.allclose(minus.zeta1, np.conj(plus.zeta1)), "zeta1 not conjugate"
    assert np.allclose(minus.zeta2, np.conj(plus.zeta2)), "zeta2 not conjugate"


def test_zeta_pair_rejects_large_frequencies():
    with pytest.raises(DomainError):
        make_zeta_pair([3.0, 0.0], 1.0)
    with pytest.raises(DomainError):
        make_zeta_pair([1.0, 0.0], 0.0)


def test_xi_grid_half():
    """The half grid keeps xi = 0 first and one member of every +-xi pair."""
    full = xi_grid(1.0, 1.0, 2)
    half = xi_grid(1.0, 1.0, 2, half=True)
    assert len(full) == 5, f"full grid has {len(full)} points"
    assert len(half) == 3, f"half grid has {len(half)} points"
    assert not np.any(half[0]), "xi = 0 must come first"
    for xi in half[1:]:
        assert not any(np.array_equal(-xi, other) for other in half), f"{xi} and its negative both kept"
    print("✓ Half xi grid")


def test_cauchy_transform_inverts_dbar():
    """The transform of (d_1 + i d_2) g returns g for a decaying g."""
    zeta0 = np.array([1.0, 1j])
    points = np.array([[0.0, 0.0], [0.3, -0.2], [0.5, 0.5]])
    got = cauchy_transform(_dbar_gaussian, zeta0, points, step=0.02, radius=4.0)
    error = np.max(np.abs(got - _gaussian(points)))
    assert error < 5e-2, f"inversion error {error:.2e}"
    print(f"✓ Cauchy transform inverts d-bar ({error:.2e})")


def test_cauchy_transform_is_odd_in_zeta0():
    zeta0 = np.array([1.0, 1j])
    points = np.array([[0.1, 0.2], [-0.4, 0.3]])
    forward = cauchy_transform(_gaussian, zeta0, points, step=0.05, radius=3.0)
    backward = cauchy_transform(_gaussian, -zeta0, points, step=0.05, radius=3.0)
    assert np.max(np.abs(forward + backward)) <= 1e-12 * np.max(np.abs(forward)), "transform must be odd"


def test_phase_cancellation_and_closed_form():
    """Forward and adjoint phases cancel; both match -((n-1)/4) log c(x', 0)."""
    c = build_scenario("gauss-profile", 3)
    points = np.stack(np.meshgrid(np.linspace(-0.5, 0.5, 3), np.linspace(-0.5, 0.5, 3)), axis=-1).reshape(-1, 2)
    report = phase_cancellation(c, points, np.array([1.0, 1j]), step=0.05, radius=3.0)
    assert report.phase_scale > 0, "phase must be nontrivial"
    assert report.cancellation <= 1e-12 * report.phase_scale, f"cancellation {report.cancellation:.2e}"
    assert report.closed_form_gap <= 0.1 * report.phase_scale, f"closed-form gap {report.closed_form_gap:.2e}"
    print("✓ Phase cancellation")


def test_cgo_products_reproduce_exponentials(bump, grid17):
    """With c(x', 0) = 1 the pair products are e^(i x.xi) up to discretization error."""
    xi = np.array([1.0, 0.0])
    first, second = build_cgo_pair(bump, grid17, make_zeta_pair(xi, 0.25))
    product = first.interior.values * second.interior.values
    assert first.relative_remainder < 1e-3, f"remainder {first.relative_remainder:.2e}"
    assert second.relative_remainder < 1e-3, f"remainder {second.relative_remainder:.2e}"
    assert np.max(np.abs(product - np.exp(1j * grid17.points @ xi))) < 1e-3, "product is not e^(i x.xi)"
    print("✓ CGO products")


def test_exponent_overflow_raises(grid17):
    with pytest.raises(CGOError):
        cgo_exponent(grid17, np.array([1.0, 1j]), 1e-3)


def test_fourier_probe_of_constant(bump, grid17):
    """Probing the constant 1 gives its Fourier integral at each xi."""
    table = fourier_probe(ScalarField.constant(grid17, 1.0), xi_grid(1.0, 1.0, 2, half=True)[1:], 0.25, bump)
    assert len(table) == 2, "one row per xi"
    assert np.allclose(table["probe_re"], table["reference_re"], atol=1e-2), "real parts differ"
    assert np.allclose(table["probe_im"], table["reference_im"], atol=1e-2), "imaginary parts differ"


def test_remainder_sweep_columns(bump, grid17):
    table = remainder_sweep(bump, grid17, [1.0, 0.0], [0.5, 0.25])
    assert list(table.columns) == ["h", "remainder_1", "remainder_2", "remainder", "resolution", "resolved"]
    assert table["resolved"].all(), "the d = 2 pair at |xi| = 1 is resolved on 17 nodes"
    assert (table["remainder"] >= table["remainder_1"]).all()


def test_flat_factor_has_no_remainder_in_four_dimensions():
    """For constant c the CGO solution is the flat discrete solution, so r = 0 at every h."""
    grid = Grid(Domain.cube(3), 17)
    table = remainder_sweep(build_scenario("constant", 4), grid, [1.0, 0.0, 0.0], [1.0, 0.5, 0.25, 0.125])
    assert table["resolved"].tolist() == [True, True, False, False], f"resolution {table['resolution'].tolist()}"
    assert table["remainder"].max() <= 1e-8, f"remainders {table['remainder'].tolist()}"
    print("✓ Flat factor: zero remainder in n = 4")


def test_remainder_decreases_with_h_in_four_dimensions():
    """exp-profile in n = 4: the remainder does not grow as h decreases over the resolved levels."""
    grid = Grid(Domain.cube(3), 17)
    c = build_scenario("exp-profile", 4)
    table = remainder_sweep(c, grid, [1.0, 0.0, 0.0], [1.0, 0.5, 0.25, 0.125])
    resolved = table[table["resolved"]]["remainder"].tolist()
    assert len(resolved) == 2, f"resolved rows {resolved}"
    assert resolved[0] > 0, "remainder must be nontrivial for a tilted profile"
    assert resolved[1] <= resolved[0] * 1.05, f"remainders {resolved}"
    print(f"✓ n = 4 remainders {resolved[0]:.2e} -> {resolved[1]:.2e}")


def test_resolution_of_the_pair():
    """In d >= 3, |zeta| = sqrt(2), so the resolution is sqrt(2) grid.h / h."""
    grid = Grid(Domain.cube(3), 17)
    pair = make_zeta_pair([1.0, 0.0, 0.0], 0.5)
    resolution = cgo_resolution(grid, pair.zeta1, pair.h)
    assert abs(resolution - np.sqrt(2.0) * grid.h / 0.5) < 1e-12, f"resolution {resolution}"
    assert resolution <= CGO_RESOLUTION_BOUND
    assert cgo_resolution(grid, pair.zeta1, 0.125) > CGO_RESOLUTION_BOUND


def test_drift_decay_detection():
    """A Gaussian profile decays at infinity; an exponential profile does not."""
    points = np.array([[0.0, 0.0], [0.5, -0.5]])
    zeta0 = np.array([1.0, 1j])
    assert drift_decays(build_scenario("gauss-profile", 3), points, zeta0)
    assert drift_decays(build_scenario("bump-cubic", 3), points, zeta0)
    assert not drift_decays(build_scenario("exp-profile", 3), points, zeta0)
