"""
Tests for observed orders, fitted orders and noise floors
"""
import numpy as np
import pandas as pd

from minsurf_lab.convergence import fitted_order, halving_ratios, noise_floor, pre_floor_orders, slope_table


def test_fitted_order_of_power_law():
    """A clean e = 3 s^2 sequence fits slope 2."""
    steps = [0.1, 0.05, 0.025, 0.0125]
    errors = [3.0 * s ** 2 for s in steps]
    assert abs(fitted_order(steps, errors) - 2.0) < 1e-12
    assert np.allclose(halving_ratios(errors), 4.0)
    print("✓ Fitted order of a power law")


def test_fitted_order_averages_noisy_pairs():
    """Pairwise orders scatter around the fitted slope."""
    steps = [0.08, 0.04, 0.02, 0.01]
    errors = [6.4e-3 * 1.1, 1.6e-3 * 0.9, 4.0e-4 * 1.05, 1.0e-4]
    table = slope_table(steps, errors, label="eps")
    pairwise = table["order"].to_numpy()[1:]
    fitted = fitted_order(steps, errors)
    assert pairwise.min() < fitted < pairwise.max(), f"{pairwise} vs {fitted:.3f}"
    assert abs(fitted - 2.0) < 0.15


def test_pre_floor_orders_stop_at_the_floor():
    table = pd.DataFrame({"error": [1e-2, 2.5e-3, 1e-9, 1e-9], "order": [np.nan, 2.0, 11.0, 0.0]})
    assert pre_floor_orders(table, 1e-6).tolist() == [2.0]


def test_noise_floor_terms():
    assert noise_floor(0.1) == 0.1 ** 2
    assert np.isclose(noise_floor(0.0, 0.01, 2, 1e-10, c_grid=0.0), 1e-4 + 1e-6)
