"""
Analytic graphs x_n = u(x') with exact derivatives

Used as exact u-derivative providers for the residual cross-checks, as
manufactured solutions, and as boundary-data shapes for the solvers.
"""
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from minsurf_lab.conformal_geometry import JetPoint
from minsurf_lab.exceptions import ConfigurationError


class Surface:
    """Base class: subclasses provide value, gradient and hessian."""

    def value(self, x_prime: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, x_prime: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, x_prime: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def laplacian(self, x_prime: np.ndarray) -> np.ndarray:
        return np.trace(self.hessian(x_prime), axis1=-2, axis2=-1)

    def jet(self, x_prime: np.ndarray) -> JetPoint:
        x_prime = np.asarray(x_prime, dtype=float)
        return JetPoint(
            x_prime=x_prime,
            u=self.value(x_prime),
            p=self.gradient(x_prime),
            P=self.hessian(x_prime),
        )

    def __call__(self, x_prime: np.ndarray) -> np.ndarray:
        return self.value(x_prime)


@dataclass(frozen=True)
class AffineSurface(Surface):
    """u = offset + slope . x'"""
    slope: Tuple[float, ...]
    offset: float = 0.0

    def value(self, x_prime):
        return self.offset + np.asarray(x_prime, dtype=float) @ np.asarray(self.slope)

    def gradient(self, x_prime):
        x_prime = np.asarray(x_prime, dtype=float)
        return np.broadcast_to(np.asarray(self.slope, dtype=float), x_prime.shape).copy()

    def hessian(self, x_prime):
        x_prime = np.asarray(x_prime, dtype=float)
        d = x_prime.shape[-1]
        return np.zeros(x_prime.shape[:-1] + (d, d))


@dataclass(frozen=True)
class ScherkSurface(Surface):
    """
    Scherk's surface u = log(cos(a x_1) / cos(a x_2)) / a.

    Solves the Euclidean minimal surface equation on |x_i| < pi / (2a).
    Extra base axes (d > 2) are ignored.
    """
    scale: float = 1.0

    def value(self, x_prime):
        a = self.scale
        x_prime = np.asarray(x_prime, dtype=float)
        return np.log(np.cos(a * x_prime[..., 0]) / np.cos(a * x_prime[..., 1])) / a

    def gradient(self, x_prime):
        a = self.scale
        x_prime = np.asarray(x_prime, dtype=float)
        grad = np.zeros_like(x_prime)
        grad[..., 0] = -np.tan(a * x_prime[..., 0])
        grad[..., 1] = np.tan(a * x_prime[..., 1])
        return grad

    def hessian(self, x_prime):
        a = self.scale
        x_prime = np.asarray(x_prime, dtype=float)
        d = x_prime.shape[-1]
        hess = np.zeros(x_prime.shape[:-1] + (d, d))
        hess[..., 0, 0] = -a / np.cos(a * x_prime[..., 0]) ** 2
        hess[..., 1, 1] = a / np.cos(a * x_prime[..., 1]) ** 2
        return hess


@dataclass(frozen=True)
class PolynomialSurface(Surface):
    """u = sum_e coef_e * prod_i x_i^e_i, exponents keyed as tuples."""
    coefficients: Tuple[Tuple[Tuple[int, ...], float], ...]

    @classmethod
    def from_dict(cls, coefficients: Dict[Tuple[int, ...], float]) -> "PolynomialSurface":
        return cls(tuple(sorted(coefficients.items())))

    def _monomials(self, x_prime: np.ndarray, counts: Tuple[int, ...]) -> np.ndarray:
        x_prime = np.asarray(x_prime, dtype=float)
        total = np.zeros(x_prime.shape[:-1])
        for exponents, coef in self.coefficients:
            term = np.full(x_prime.shape[:-1], coef)
            for i, (e, k) in enumerate(zip(exponents, counts)):
                if k > e:
                    term = np.zeros_like(term)
                    break
                term = term * (math.factorial(e) // math.factorial(e - k)) * x_prime[..., i] ** (e - k)
            total = total + term
        return total

    def _unit(self, d: int, *axes: int) -> Tuple[int, ...]:
        counts = [0] * d
        for a in axes:
            counts[a] += 1
        return tuple(counts)

    def value(self, x_prime):
        d = np.shape(x_prime)[-1]
        return self._monomials(x_prime, (0,) * d)

    def gradient(self, x_prime):
        d = np.shape(x_prime)[-1]
        return np.stack([self._monomials(x_prime, self._unit(d, i)) for i in range(d)], axis=-1)

    def hessian(self, x_prime):
        x_prime = np.asarray(x_prime, dtype=float)
        d = x_prime.shape[-1]
        hess = np.empty(x_prime.shape[:-1] + (d, d))
        for i in range(d):
            for j in range(i, d):
                hess[..., i, j] = hess[..., j, i] = self._monomials(x_prime, self._unit(d, i, j))
        return hess


@dataclass(frozen=True)
class CosineSurface(Surface):
    """u = amplitude * cos(k . x' + phase); an oscillatory test shape."""
    wavevector: Tuple[float, ...]
    amplitude: float = 1.0
    phase: float = 0.0

    def _arg(self, x_prime):
        return np.asarray(x_prime, dtype=float) @ np.asarray(self.wavevector) + self.phase

    def value(self, x_prime):
        return self.amplitude * np.cos(self._arg(x_prime))

    def gradient(self, x_prime):
        k = np.asarray(self.wavevector, dtype=float)
        return -self.amplitude * np.sin(self._arg(x_prime))[..., None] * k

    def hessian(self, x_prime):
        k = np.asarray(self.wavevector, dtype=float)
        return -self.amplitude * np.cos(self._arg(x_prime))[..., None, None] * np.outer(k, k)


def harmonic_polynomial(degree: int, dimension: int = 2) -> PolynomialSurface:
    """Re (x_1 + i x_2)^degree as a polynomial in dimension variables."""
    coefficients: Dict[Tuple[int, ...], float] = {}
    for j in range(degree + 1):
        coef = math.comb(degree, j) * (1j ** j)
        if abs(coef.real) > 0:
            exponents = [0] * dimension
            exponents[0], exponents[1] = degree - j, j
            coefficients[tuple(exponents)] = float(coef.real)
    return PolynomialSurface.from_dict(coefficients)


def random_polynomial_surface(
    rng: np.random.Generator,
    dimension: int,
    degree: int = 3,
    scale: float = 0.3,
) -> PolynomialSurface:
    """Polynomial with all monomials of total degree <= degree and N(0, scale^2) coefficients."""
    coefficients = {}
    for exponents in np.ndindex(*([degree + 1] * dimension)):
        if sum(exponents) <= degree:
            coefficients[tuple(int(e) for e in exponents)] = float(scale * rng.standard_normal())
    return PolynomialSurface.from_dict(coefficients)


def shape_from_spec(spec: str, dimension: int, seed: Optional[int] = 0) -> Surface:
    """
    Parse a boundary-shape spec.

    Formats:
        constant:a            u = a
        affine:b,a1,...,ad    u = b + a . x'  (missing slopes are 0)
        harmonic:k            Re (x_1 + i x_2)^k
        scherk:a              Scherk surface with scale a
        cosine:k1,...,kd      cos(k . x')
        poly:degree           random polynomial (seeded)

    Args:
        spec: Shape spec string
        dimension: Base dimension d = n - 1
        seed: Seed for random shapes

    Returns:
        Analytic Surface
    """
    kind, _, raw = spec.partition(":")
    values = [float(v) for v in raw.split(",") if v.strip()] if raw else []
    kind = kind.strip().lower()

    if kind == "constant":
        return AffineSurface(slope=(0.0,) * dimension, offset=values[0] if values else 1.0)
    if kind == "affine":
        if not values:
            raise ConfigurationError("affine shape needs at least an offset")
        slope = (values[1:] + [0.0] * dimension)[:dimension]
        return AffineSurface(slope=tuple(slope), offset=values[0])
    if kind == "harmonic":
        return harmonic_polynomial(int(values[0]) if values else 3, dimension)
    if kind == "scherk":
        return ScherkSurface(scale=values[0] if values else 1.0)
    if kind == "cosine":
        wavevector = (values + [0.0] * dimension)[:dimension]
        return CosineSurface(wavevector=tuple(wavevector))
    if kind == "poly":
        degree = int(values[0]) if values else 3
        return random_polynomial_surface(np.random.default_rng(seed), dimension, degree)
    raise ConfigurationError(f"unknown boundary shape '{spec}'")
