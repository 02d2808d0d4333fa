"""
Conformally Euclidean geometry: catalog of conformal factors with exact
derivatives, Christoffel symbols, and the minimal surface operator F

A conformal factor is stored as a finite sum of separable terms
    c(x) = sum_t coef_t * prod_i phi_{t,i}(x_i)
so every partial derivative is exact: each axis profile knows its own
derivatives of any order (monomials, exponentials, Gaussians via Hermite
polynomials, and products via the Leibniz rule).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import hermite_e

from minsurf_lab.config import (
    ADMISSIBILITY_SAMPLES,
    ADMISSIBILITY_TOLERANCE,
    DOMAIN_LOWER,
    DOMAIN_UPPER,
    MAX_DERIVATIVE_ORDER,
    scenario_parameters,
)
from minsurf_lab.exceptions import ConfigurationError, DomainError

logger = logging.getLogger(__name__)

# ============================================================================
# AXIS PROFILES
# ============================================================================


@dataclass(frozen=True)
class Monomial:
    """phi(x) = x**power"""
    power: int

    def derivative(self, x: np.ndarray, order: int) -> np.ndarray:
        if order > self.power:
            return np.zeros_like(x, dtype=float)
        coef = math.factorial(self.power) // math.factorial(self.power - order)
        return coef * np.asarray(x, dtype=float) ** (self.power - order)


@dataclass(frozen=True)
class Exponential:
    """phi(x) = exp(rate * x)"""
    rate: float

    def derivative(self, x: np.ndarray, order: int) -> np.ndarray:
        return self.rate ** order * np.exp(self.rate * np.asarray(x, dtype=float))


@dataclass(frozen=True)
class Gaussian:
    """phi(x) = exp(-(x - center)^2 / (2 radius^2))"""
    center: float
    radius: float

    def derivative(self, x: np.ndarray, order: int) -> np.ndarray:
        t = (np.asarray(x, dtype=float) - self.center) / self.radius
        hermite = hermite_e.hermeval(t, [0.0] * order + [1.0])
        return (-1.0 / self.radius) ** order * hermite * np.exp(-0.5 * t * t)


@dataclass(frozen=True)
class ProductProfile:
    """phi = first * second, differentiated with the Leibniz rule."""
    first: Any
    second: Any

    def derivative(self, x: np.ndarray, order: int) -> np.ndarray:
        total = np.zeros_like(np.asarray(x, dtype=float))
        for j in range(order + 1):
            total = total + math.comb(order, j) * (
                self.first.derivative(x, j) * self.second.derivative(x, order - j)
            )
        return total


def _multiply_profiles(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return ProductProfile(a, b)


# ============================================================================
# SEPARABLE SUMS
# ============================================================================


@dataclass(frozen=True)
class SeparableSum:
    """Finite sum of products of axis profiles; None stands for the profile 1."""
    dimension: int
    terms: Tuple[Tuple[float, Tuple[Any, ...]], ...]

    @classmethod
    def constant(cls, dimension: int, value: float) -> "SeparableSum":
        return cls(dimension, ((float(value), (None,) * dimension),))

    @classmethod
    def term(cls, dimension: int, coef: float, profiles: Dict[int, Any]) -> "SeparableSum":
        axes = tuple(profiles.get(i) for i in range(dimension))
        return cls(dimension, ((float(coef), axes),))

    def __add__(self, other: Union["SeparableSum", float]) -> "SeparableSum":
        if not isinstance(other, SeparableSum):
            other = SeparableSum.constant(self.dimension, other)
        return SeparableSum(self.dimension, self.terms + other.terms)

    __radd__ = __add__

    def __mul__(self, other: Union["SeparableSum", float]) -> "SeparableSum":
        if not isinstance(other, SeparableSum):
            return SeparableSum(
                self.dimension, tuple((coef * other, axes) for coef, axes in self.terms)
            )
        terms = []
        for coef_a, axes_a in self.terms:
            for coef_b, axes_b in other.terms:
                axes = tuple(_multiply_profiles(a, b) for a, b in zip(axes_a, axes_b))
                terms.append((coef_a * coef_b, axes))
        return SeparableSum(self.dimension, tuple(terms))

    __rmul__ = __mul__

    def truncate_axis(self, axis: int, order: int) -> "SeparableSum":
        """Replace the profile on one axis by its Taylor polynomial of the given order at 0."""
        terms = []
        for coef, axes in self.terms:
            profile = axes[axis]
            if profile is None:
                terms.append((coef, axes))
                continue
            for k in range(order + 1):
                taylor = float(profile.derivative(np.zeros(()), k)) / math.factorial(k)
                if taylor != 0.0:
                    terms.append((coef * taylor, axes[:axis] + (Monomial(k),) + axes[axis + 1:]))
        return SeparableSum(self.dimension, tuple(terms))

    def evaluate(self, x: np.ndarray, counts: Sequence[int]) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        total = np.zeros(x.shape[:-1])
        for coef, axes in self.terms:
            if coef == 0.0:
                continue
            product = np.full(x.shape[:-1], coef)
            for i, profile in enumerate(axes):
                k = counts[i]
                if profile is None:
                    if k > 0:
                        product = np.zeros_like(product)
                        break
                    continue
                product = product * profile.derivative(x[..., i], k)
            total = total + product
        return total


# ============================================================================
# CONFORMAL FACTOR
# ============================================================================


def _sample_base_points(dimension: int) -> np.ndarray:
    axis = np.linspace(DOMAIN_LOWER, DOMAIN_UPPER, ADMISSIBILITY_SAMPLES)
    mesh = np.meshgrid(*([axis] * (dimension - 1)), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class ConformalFactor:
    """
    Analytic conformal factor c(x) > 0 of the metric g = c * delta on R^n.

    Attributes:
        name: Catalog id
        dimension: Ambient dimension n >= 3
        expansion: Separable representation with exact derivatives
        params: Parameters the catalog entry was built with
        admissible: dc/dx_n(x',0) and d2c/dx_n2(x',0) vanish on the sampled base domain
    """
    name: str
    dimension: int
    expansion: SeparableSum
    params: Dict[str, Any] = field(default_factory=dict, compare=False)
    admissible: bool = field(init=False)

    def __post_init__(self):
        if self.dimension < 3:
            raise ConfigurationError(f"ambient dimension must be >= 3, got {self.dimension}")
        object.__setattr__(self, "admissible", self.check_admissible(_sample_base_points(self.dimension)))

    @property
    def base_dimension(self) -> int:
        return self.dimension - 1

    @property
    def max_derivative_order(self) -> int:
        return MAX_DERIVATIVE_ORDER

    def derivative(self, x: np.ndarray, axes: Sequence[int] = ()) -> np.ndarray:
        """
        Exact partial derivative of c.

        Args:
            x: Points, shape (..., n)
            axes: Differentiation directions, e.g. (0, 2, 2) for d^3 c / dx_0 dx_2^2.
                  Ordering is irrelevant.

        Returns:
            Derivative values, shape (...)
        """
        if len(axes) > MAX_DERIVATIVE_ORDER:
            raise ConfigurationError(f"derivative order {len(axes)} exceeds {MAX_DERIVATIVE_ORDER}")
        counts = np.bincount(np.asarray(axes, dtype=int), minlength=self.dimension) if len(axes) else [0] * self.dimension
        return self.expansion.evaluate(x, list(counts))

    def value(self, x: np.ndarray) -> np.ndarray:
        return self.derivative(x, ())

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return np.stack([self.derivative(x, (i,)) for i in range(self.dimension)], axis=-1)

    def hessian(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = self.dimension
        out = np.empty(x.shape[:-1] + (n, n))
        for i in range(n):
            for j in range(i, n):
                out[..., i, j] = out[..., j, i] = self.derivative(x, (i, j))
        return out

    def positive_value(self, x: np.ndarray) -> np.ndarray:
        """c(x), raising DomainError where the metric degenerates."""
        c = self.value(x)
        if np.any(~(c > 0)):
            raise DomainError(f"conformal factor '{self.name}' is not positive at every requested point")
        return c

    def log_factor(self, x: np.ndarray) -> np.ndarray:
        """lambda = 1/2 log c, computed on demand."""
        return 0.5 * np.log(self.positive_value(x))

    def log_factor_gradient(self, x: np.ndarray) -> np.ndarray:
        return self.gradient(x) / (2.0 * self.positive_value(x)[..., None])

    # ------------------------------------------------------------------
    # Quantities on the hyperplane x_n = 0
    # ------------------------------------------------------------------

    def lift(self, x_prime: np.ndarray, height: Union[float, np.ndarray] = 0.0) -> np.ndarray:
        x_prime = np.asarray(x_prime, dtype=float)
        height = np.broadcast_to(np.asarray(height, dtype=float), x_prime.shape[:-1])
        return np.concatenate([x_prime, height[..., None]], axis=-1)

    def base_value(self, x_prime: np.ndarray) -> np.ndarray:
        """c(x', 0)"""
        return self.positive_value(self.lift(x_prime))

    def base_gradient(self, x_prime: np.ndarray) -> np.ndarray:
        """grad' c(x', 0), shape (..., n-1)"""
        return self.gradient(self.lift(x_prime))[..., : self.base_dimension]

    def base_hessian(self, x_prime: np.ndarray) -> np.ndarray:
        d = self.base_dimension
        return self.hessian(self.lift(x_prime))[..., :d, :d]

    def normal_taylor_coefficient(self, x_prime: np.ndarray, order: int) -> np.ndarray:
        """d^order c / dx_n^order at (x', 0)."""
        return self.derivative(self.lift(x_prime), (self.dimension - 1,) * order)

    def normal_truncation(self, order: int) -> "ConformalFactor":
        """c with its x_n-dependence replaced by the normal Taylor polynomial of the given order at x_n = 0."""
        expansion = self.expansion.truncate_axis(self.dimension - 1, order)
        return ConformalFactor(f"{self.name}|x_n^{order}", self.dimension, expansion, self.params)

    def check_admissible(self, x_prime: np.ndarray) -> bool:
        first = self.normal_taylor_coefficient(x_prime, 1)
        second = self.normal_taylor_coefficient(x_prime, 2)
        return bool(
            np.max(np.abs(first)) <= ADMISSIBILITY_TOLERANCE
            and np.max(np.abs(second)) <= ADMISSIBILITY_TOLERANCE
        )

    def first_nonzero_normal_order(self, x_prime: np.ndarray, max_order: int = 6, tol: float = 1e-12) -> Optional[int]:
        for k in range(1, max_order + 1):
            if np.max(np.abs(self.normal_taylor_coefficient(x_prime, k))) > tol:
                return k
        return None


# ============================================================================
# SCENARIO CATALOG
# ============================================================================


def _per_axis(value: Union[float, Sequence[float]], count: int, pad: float = 0.0) -> Tuple[float, ...]:
    if np.ndim(value) == 0:
        return (float(value),) + (pad,) * (count - 1) if pad is not None else (float(value),) * count
    values = tuple(float(v) for v in value)
    if len(values) != count:
        raise ConfigurationError(f"expected {count} per-axis values, got {len(values)}")
    return values


def _gaussian_bump(n: int, center: Sequence[float], radius: float) -> SeparableSum:
    return SeparableSum.term(n, 1.0, {i: Gaussian(center[i], radius) for i in range(n - 1)})


def _exponential_profile(n: int, kappa: Sequence[float]) -> SeparableSum:
    profiles = {i: Exponential(k) for i, k in enumerate(kappa) if k != 0.0}
    return SeparableSum.term(n, 1.0, profiles)


def _taylor_factor(
    name: str,
    n: int,
    params: Dict[str, Any],
    coefficients: Dict[int, float],
    beta0: float = 0.0,
) -> ConformalFactor:
    d = n - 1
    center = _per_axis(params.get("center", 0.0), d, pad=None)
    radius = float(params.get("radius", 0.35))
    kappa = _per_axis(params.get("kappa", 0.0), d)
    bump = _gaussian_bump(n, center, radius)

    base = _exponential_profile(n, kappa)
    if beta0:
        base = base * (1.0 + beta0 * bump)

    normal = SeparableSum.constant(n, 1.0)
    for order, coef in sorted(coefficients.items()):
        if coef:
            normal = normal + coef * (SeparableSum.term(n, 1.0, {n - 1: Monomial(order)}) * bump)
    return ConformalFactor(name, n, base * normal, params)


def build_scenario(name: str, dimension: int = 3, **overrides: Any) -> ConformalFactor:
    """
    Build a catalog conformal factor.

    Args:
        name: Catalog id (see config.SCENARIOS)
        dimension: Ambient dimension n >= 3
        **overrides: Parameters replacing the catalog defaults

    Returns:
        ConformalFactor with exact derivatives and its admissibility flag
    """
    params = scenario_parameters(name, overrides)
    n = int(dimension)
    if n < 3:
        raise ConfigurationError(f"ambient dimension must be >= 3, got {n}")

    if name == "constant":
        factor = ConformalFactor(name, n, SeparableSum.constant(n, params["level"]), params)
    elif name == "exp-normal":
        expansion = SeparableSum.term(n, 1.0, {n - 1: Exponential(params["rate"])})
        factor = ConformalFactor(name, n, expansion, params)
    elif name == "bump-cubic":
        factor = _taylor_factor(name, n, params, {3: params["alpha"]})
    elif name == "quartic":
        factor = _taylor_factor(name, n, params, {4: params["gamma"]})
    elif name == "exp-profile":
        factor = _taylor_factor(name, n, params, {})
    elif name == "gauss-profile":
        factor = _taylor_factor(name, n, params, {3: params["alpha"]}, beta0=params["beta0"])
    elif name == "taylor":
        coefficients = {int(k): float(v) for k, v in params["coefficients"].items()}
        if any(k < 1 for k in coefficients):
            raise ConfigurationError("normal Taylor orders must be >= 1")
        factor = _taylor_factor(name, n, params, coefficients)
    else:  # catalog entry without a builder
        raise ConfigurationError(f"scenario '{name}' has no builder")

    logger.debug("built scenario %s (n=%d, admissible=%s)", name, n, factor.admissible)
    return factor


# ============================================================================
# JETS AND THE MINIMAL SURFACE OPERATOR
# ============================================================================


@dataclass(frozen=True)
class JetPoint:
    """
    Second-order jet (x', u, p, P) of a graph x_n = u(x'), vectorized over
    leading axes.

    Attributes:
        x_prime: Base points, shape (..., d)
        u: Heights, shape (...)
        p: Gradients, shape (..., d)
        P: Hessians, shape (..., d, d), symmetric
    """
    x_prime: np.ndarray
    u: np.ndarray
    p: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P)
        scale = max(1.0, float(np.max(np.abs(P)))) if P.size else 1.0
        if P.size and np.max(np.abs(P - np.swapaxes(P, -1, -2))) > 1e-12 * scale:
            raise DomainError("jet Hessian P must be symmetric")

    @property
    def ambient(self) -> np.ndarray:
        """Points (x', u(x')) on the graph, shape (..., n)."""
        return np.concatenate([self.x_prime, np.asarray(self.u)[..., None]], axis=-1)

    @property
    def slope_weight(self) -> np.ndarray:
        """1 + |p|^2"""
        return 1.0 + np.sum(self.p * self.p, axis=-1)


@dataclass(frozen=True)
class FDerivatives:
    """First derivatives of F with respect to u, p and P at a jet."""
    du: np.ndarray
    dp: np.ndarray
    dP: np.ndarray


def christoffel(c: ConformalFactor, x: np.ndarray) -> np.ndarray:
    """
    Christoffel symbols of g = c * delta.

    Gamma^m_ij = d_i lambda delta_jm + d_j lambda delta_im - d_m lambda delta_ij,
    lambda = 1/2 log c.

    Args:
        c: Conformal factor
        x: Points, shape (..., n)

    Returns:
        Array indexed [..., m, i, j]
    """
    dl = c.log_factor_gradient(x)
    eye = np.eye(c.dimension)
    return (
        np.einsum("...i,jm->...mij", dl, eye)
        + np.einsum("...j,im->...mij", dl, eye)
        - np.einsum("...m,ij->...mij", dl, eye)
    )


def eval_F(c: ConformalFactor, jet: JetPoint) -> np.ndarray:
    """
    Minimal surface operator
        F = -tr P - (n-1)/(2c) (p . grad'c - d_n c) + p^T P p / (1 + |p|^2)
    with c and its derivatives taken at (x', u).
    """
    n = c.dimension
    x = jet.ambient
    cval = c.positive_value(x)
    grad = c.gradient(x)
    p, P = jet.p, jet.P
    convection = np.sum(p * grad[..., : n - 1], axis=-1) - grad[..., n - 1]
    curvature = np.einsum("...i,...ij,...j->...", p, P, p) / jet.slope_weight
    return -np.trace(P, axis1=-2, axis2=-1) - (n - 1) / (2.0 * cval) * convection + curvature


def F_derivatives(c: ConformalFactor, jet: JetPoint) -> FDerivatives:
    """
    Exact first derivatives of F, used for the Newton Jacobian and for the
    linearizations at u = 0.
    """
    n = c.dimension
    d = n - 1
    x = jet.ambient
    cval = c.positive_value(x)
    grad = c.gradient(x)
    hess = c.hessian(x)
    p, P = jet.p, jet.P
    W = jet.slope_weight
    k = (n - 1) / (2.0 * cval)

    dcn = grad[..., d]
    convection = np.sum(p * grad[..., :d], axis=-1) - dcn
    convection_du = np.sum(p * hess[..., :d, d], axis=-1) - hess[..., d, d]
    du = k * dcn / cval * convection - k * convection_du

    Pp = np.einsum("...ij,...j->...i", P, p)
    pPp = np.sum(p * Pp, axis=-1)
    dp = (
        -k[..., None] * grad[..., :d]
        - 2.0 * p * (pPp / W ** 2)[..., None]
        + 2.0 * Pp / W[..., None]
    )
    dP = -np.eye(d) + np.einsum("...i,...j->...ij", p, p) / W[..., None, None]
    return FDerivatives(du=du, dp=dp, dP=dP)
