"""
The three forms of the minimal surface equation for graphs x_n = u(x')

- graph form:       F(x', u, grad u, hess u)
- implicit form:    c^2 (|grad_g f|^2 Lap_g f - Hess_g f(grad_g f, grad_g f)),  f = x_n - u
- divergence form:  -div_g(grad u / W^(1/2)) + (n-1) d_n c / (2 c W^(1/2)),     W = 1 + |grad u|^2

They agree up to positive factors:
    implicit   = W       * graph
    divergence = W^(-1/2) * graph

Every residual accepts either a ScalarField (derivatives by finite
differences) or a JetPoint (exact derivatives from an analytic surface).
"""
import logging
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

from minsurf_lab.conformal_geometry import ConformalFactor, JetPoint, christoffel, eval_F
from minsurf_lab.grid import Grid, ScalarField, divergence_fd, gradient_fd, hessian_fd
from minsurf_lab.surfaces import random_polynomial_surface

logger = logging.getLogger(__name__)

SurfaceInput = Union[ScalarField, JetPoint]


def surface_jet(u: SurfaceInput) -> Tuple[JetPoint, Optional[Grid]]:
    """Jet of u and, for grid input, the grid it lives on."""
    if isinstance(u, JetPoint):
        return u, None
    grid = u.grid
    jet = JetPoint(
        x_prime=grid.points,
        u=u.values,
        p=gradient_fd(u),
        P=hessian_fd(u),
    )
    return jet, grid


def _wrap(values: np.ndarray, grid: Optional[Grid]):
    return ScalarField(grid, values) if grid is not None else values


# ============================================================================
# RESIDUAL FORMS
# ============================================================================


def graph_residual(c: ConformalFactor, u: SurfaceInput):
    """Pointwise F(x', u, grad u, hess u); ScalarField in, ScalarField out."""
    jet, grid = surface_jet(u)
    return _wrap(eval_F(c, jet), grid)


def implicit_residual(c: ConformalFactor, u: SurfaceInput):
    """
    c^2 (|grad_g f|_g^2 Lap_g f - Hess_g f(grad_g f, grad_g f)) for f = x_n - u,
    assembled from the Riemannian gradient and Hessian at (x', u(x')).
    """
    jet, grid = surface_jet(u)
    n = c.dimension
    d = n - 1
    x = jet.ambient
    cval = c.positive_value(x)

    df = np.concatenate([-jet.p, np.ones(jet.p.shape[:-1] + (1,))], axis=-1)
    d2f = np.zeros(jet.P.shape[:-2] + (n, n))
    d2f[..., :d, :d] = -jet.P

    gamma = christoffel(c, x)
    hess_g = d2f - np.einsum("...mij,...m->...ij", gamma, df)   # covariant Hessian
    grad_g = df / cval[..., None]                                 # g^{ij} d_j f
    grad_norm_sq = cval * np.sum(grad_g * grad_g, axis=-1)        # g(grad_g f, grad_g f)
    lap_g = np.trace(hess_g, axis1=-2, axis2=-1) / cval
    hess_on_grad = np.einsum("...i,...ij,...j->...", grad_g, hess_g, grad_g)

    return _wrap(cval ** 2 * (grad_norm_sq * lap_g - hess_on_grad), grid)


def divergence_residual(c: ConformalFactor, u: SurfaceInput):
    """
    -div_g(grad u / W^(1/2)) + (n-1) d_n c / (2 c W^(1/2)).

    div_g X = div X + Gamma^i_ij X^j over the base metric c(x', u) delta.
    On a grid the Euclidean divergence is taken of the discrete flux.
    """
    jet, grid = surface_jet(u)
    n = c.dimension
    d = n - 1
    x = jet.ambient
    cval = c.positive_value(x)
    W = jet.slope_weight
    sqrt_w = np.sqrt(W)
    flux = jet.p / sqrt_w[..., None]

    if grid is not None:
        flat_divergence = divergence_fd(grid, flux)
    else:
        pPp = np.einsum("...i,...ij,...j->...", jet.p, jet.P, jet.p)
        flat_divergence = np.trace(jet.P, axis1=-2, axis2=-1) / sqrt_w - pPp / W ** 1.5

    gamma = christoffel(c, x)[..., :d, :d, :d]
    contraction = np.einsum("...iij->...j", gamma)                # sum_i Gamma^i_ij
    riemannian_divergence = flat_divergence + np.sum(contraction * flux, axis=-1)
    dcn = c.derivative(x, (n - 1,))
    return _wrap(-riemannian_divergence + (n - 1) * dcn / (2.0 * cval * sqrt_w), grid)


def euclidean_residual(u: SurfaceInput):
    """Classical -div(grad u / W^(1/2)) * W^(1/2) for the flat metric."""
    jet, grid = surface_jet(u)
    W = jet.slope_weight
    pPp = np.einsum("...i,...ij,...j->...", jet.p, jet.P, jet.p)
    divergence = np.trace(jet.P, axis1=-2, axis2=-1) / np.sqrt(W) - pPp / W ** 1.5
    return _wrap(-divergence * np.sqrt(W), grid)


# ============================================================================
# DERIVATION CHECK
# ============================================================================


def _relative_gap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)


def verify_derivation(
    c: ConformalFactor,
    samples: int = 20,
    points_per_sample: int = 16,
    seed: int = 0,
    box: float = 0.8,
) -> pd.DataFrame:
    """
    Compare the three residual forms with exact derivatives of random
    polynomial graphs.

    Args:
        c: Conformal factor
        samples: Number of random polynomial surfaces
        points_per_sample: Random evaluation points per surface
        seed: RNG seed
        box: Points are drawn from [-box, box]^(n-1)

    Returns:
        DataFrame with one row per sample: implicit_gap (|implicit - W graph|),
        divergence_gap (|sqrt(W) divergence - graph|), both relative
    """
    rng = np.random.default_rng(seed)
    d = c.base_dimension
    rows = []
    for sample in range(samples):
        surface = random_polynomial_surface(rng, d, degree=3, scale=0.1)
        points = rng.uniform(-box, box, size=(points_per_sample, d))
        jet = surface.jet(points)
        W = jet.slope_weight
        graph = graph_residual(c, jet)
        implicit = implicit_residual(c, jet)
        divergence = divergence_residual(c, jet)
        rows.append({
            "scenario": c.name,
            "sample": sample,
            "implicit_gap": float(np.max(_relative_gap(implicit, W * graph))),
            "divergence_gap": float(np.max(_relative_gap(np.sqrt(W) * divergence, graph))),
            "max_abs_graph": float(np.max(np.abs(graph))),
        })
    table = pd.DataFrame(rows)
    logger.info(
        "✓ derivation check %s: max implicit gap %.2e, max divergence gap %.2e",
        c.name, table["implicit_gap"].max(), table["divergence_gap"].max(),
    )
    return table
