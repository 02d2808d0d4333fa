"""
Observed convergence orders for refinement and eps studies
"""
from typing import Optional, Sequence

import numpy as np
import pandas as pd


def halving_ratios(errors: Sequence[float]) -> np.ndarray:
    """e_k / e_{k+1} for consecutive refinement levels (~4 for second order)."""
    errors = np.asarray(errors, dtype=float)
    return errors[:-1] / errors[1:]


def observed_orders(steps: Sequence[float], errors: Sequence[float]) -> np.ndarray:
    """Pairwise log-slopes log(e_k / e_{k+1}) / log(s_k / s_{k+1})."""
    steps = np.asarray(steps, dtype=float)
    errors = np.asarray(errors, dtype=float)
    return np.log(errors[:-1] / errors[1:]) / np.log(steps[:-1] / steps[1:])


def fitted_order(steps: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(step)."""
    slope, _ = np.polyfit(np.log(np.asarray(steps, dtype=float)), np.log(np.asarray(errors, dtype=float)), 1)
    return float(slope)


def slope_table(steps: Sequence[float], errors: Sequence[float], label: str = "step") -> pd.DataFrame:
    """
    Error table with pairwise observed orders.

    Args:
        steps: Grid spacings or eps levels, descending
        errors: Matching error norms
        label: Name of the step column

    Returns:
        DataFrame with columns [label, 'error', 'ratio', 'order']
    """
    steps = list(map(float, steps))
    errors = list(map(float, errors))
    ratios = [np.nan] + list(halving_ratios(errors)) if len(errors) > 1 else [np.nan]
    orders = [np.nan] + list(observed_orders(steps, errors)) if len(errors) > 1 else [np.nan]
    return pd.DataFrame({label: steps, "error": errors, "ratio": ratios, "order": orders})


def pre_floor_orders(table: pd.DataFrame, floor: float, column: str = "order") -> np.ndarray:
    """Observed orders on rows whose error still sits above the given floor."""
    above = table["error"].to_numpy() > floor
    usable = above & np.roll(above, 1)
    usable[0] = False
    return table[column].to_numpy()[usable]


def noise_floor(
    h: float,
    eps: Optional[float] = None,
    order: int = 0,
    solver_tolerance: float = 0.0,
    c_grid: float = 1.0,
    c_eps: float = 1.0,
) -> float:
    """
    Predicted error floor c_grid h^2 + c_eps eps^2 + solver_tolerance / eps^order.

    Args:
        h: Grid spacing
        eps: Divided-difference step (None when no eps is involved)
        order: Divided-difference order m
        solver_tolerance: Newton residual tolerance
        c_grid, c_eps: Recorded constants of the scenario

    Returns:
        Predicted absolute floor
    """
    floor = c_grid * h ** 2
    if eps:
        floor += c_eps * eps ** 2 + solver_tolerance / eps ** order
    return float(floor)
