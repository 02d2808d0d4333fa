"""
Tests for Tikhonov solves and the discrepancy principle
"""
import numpy as np
import pytest

from minsurf_lab.exceptions import ConfigurationError
from minsurf_lab.regularization import (
    LOG_ALPHA_TOLERANCE,
    discrepancy_alpha,
    regularized_inverse,
    tikhonov_solve,
)


def _system(seed=7, rows=20, cols=5, noise=1e-3, complex_valued=False):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(rows, cols))
    x = rng.normal(size=cols)
    if complex_valued:
        A = A + 1j * rng.normal(size=(rows, cols))
        x = x + 1j * rng.normal(size=cols)
    e = rng.normal(size=rows)
    e *= noise / np.linalg.norm(e)
    return A, x, A @ x + e


def test_zero_alpha_is_least_squares():
    A, _, y = _system()
    expected, *_ = np.linalg.lstsq(A, y, rcond=None)
    assert np.allclose(tikhonov_solve(A, y, 0.0), expected), "alpha = 0 must give least squares"
    print("✓ alpha = 0 reduces to least squares")


def test_regularization_shrinks_solution():
    """||x_alpha|| decreases and ||A x_alpha - y|| increases with alpha."""
    A, _, y = _system()
    alphas = [1e-6, 1e-2, 1.0, 1e2]
    norms = [np.linalg.norm(tikhonov_solve(A, y, a)) for a in alphas]
    residuals = [np.linalg.norm(A @ tikhonov_solve(A, y, a) - y) for a in alphas]
    assert all(b < a for a, b in zip(norms, norms[1:])), f"norms {norms}"
    assert all(b > a for a, b in zip(residuals, residuals[1:])), f"residuals {residuals}"


def test_discrepancy_alpha_brackets_target():
    """The chosen alpha meets tau * noise, and a slightly larger one does not."""
    A, _, y = _system(noise=1e-2)
    tau, noise = 1.5, 1e-2
    alpha = discrepancy_alpha(A, y, noise, tau)
    fit = np.linalg.norm(A @ tikhonov_solve(A, y, alpha) - y)
    over = np.linalg.norm(A @ tikhonov_solve(A, y, alpha * 10 ** LOG_ALPHA_TOLERANCE) - y)
    assert fit <= tau * noise, f"residual {fit:.3e} above target {tau * noise:.3e}"
    assert over > tau * noise, "bisection left slack above the chosen alpha"
    print(f"✓ Discrepancy alpha = {alpha:.3e}")


def test_discrepancy_unreachable_target_returns_smallest_alpha():
    A, _, y = _system(noise=1.0)
    assert discrepancy_alpha(A, y, 1e-12) == pytest.approx(1e-16), "unreachable target must use the lower bound"


def test_regularized_inverse_methods():
    """Zero noise disables regularization; a fixed alpha is used as given."""
    A, x, y = _system(noise=0.0, complex_valued=True)
    exact = regularized_inverse(A, y)
    assert exact.method == "discrepancy" and exact.alpha == 0.0
    assert np.allclose(exact.x, x), "noise-free complex data must be inverted exactly"
    assert exact.condition >= 1.0

    fixed = regularized_inverse(A, y, alpha=0.5)
    assert fixed.method == "fixed" and fixed.alpha == 0.5
    assert fixed.residual > exact.residual


def test_invalid_parameters():
    A, _, y = _system()
    with pytest.raises(ConfigurationError):
        tikhonov_solve(A, y, -1.0)
    with pytest.raises(ConfigurationError):
        discrepancy_alpha(A, y, 1e-3, tau=1.0)
