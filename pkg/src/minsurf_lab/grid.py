"""
Uniform tensor grids on rectangular base domains

Provides:
- Domain / Grid with interior and boundary index sets
- Second-order finite-difference operators as sparse matrices
- ScalarField / BoundaryField containers
- Boundary normal derivatives, trapezoidal quadrature, surrogate norms

Node ordering is C-order over the axes (last axis fastest). Boundary data
lives on facet entries: one entry per (face, node), so edge and corner nodes
appear once per incident face with that face's outward normal and
trapezoidal weight.
"""
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from minsurf_lab.config import MIN_NODES_PER_AXIS
from minsurf_lab.exceptions import ConfigurationError, DomainError

# ============================================================================
# DOMAIN AND GRID
# ============================================================================


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box in R^d."""
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self):
        if len(self.lower) != len(self.upper) or not self.lower:
            raise ConfigurationError("domain corners must have equal, positive length")
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise ConfigurationError(f"upper corner {self.upper} must exceed lower corner {self.lower}")

    @classmethod
    def cube(cls, dim: int, lower: float = -1.0, upper: float = 1.0) -> "Domain":
        return cls((float(lower),) * dim, (float(upper),) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.upper, self.lower)))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lower) + np.asarray(self.upper))


@dataclass(frozen=True)
class FacetSet:
    """Boundary facet entries of a grid."""
    nodes: np.ndarray      # flat node index per entry
    axis: np.ndarray       # axis normal to the face
    side: np.ndarray       # -1 lower face, +1 upper face
    normals: np.ndarray    # outward unit normal, shape (k, d)
    weights: np.ndarray    # trapezoidal surface weights
    points: np.ndarray     # node coordinates, shape (k, d)

    def __len__(self) -> int:
        return len(self.nodes)


def _first_derivative_1d(N: int, h: float) -> sp.csr_matrix:
    D = sp.lil_matrix((N, N))
    for i in range(1, N - 1):
        D[i, i - 1] = -0.5 / h
        D[i, i + 1] = 0.5 / h
    D[0, 0:3] = np.array([-3.0, 4.0, -1.0]) / (2.0 * h)
    D[N - 1, N - 3:N] = np.array([1.0, -4.0, 3.0]) / (2.0 * h)
    return D.tocsr()


def _second_derivative_1d(N: int, h: float) -> sp.csr_matrix:
    D = sp.lil_matrix((N, N))
    for i in range(1, N - 1):
        D[i, i - 1] = 1.0 / h ** 2
        D[i, i] = -2.0 / h ** 2
        D[i, i + 1] = 1.0 / h ** 2
    D[0, 0:4] = np.array([2.0, -5.0, 4.0, -1.0]) / h ** 2
    D[N - 1, N - 4:N] = np.array([-1.0, 4.0, -5.0, 2.0]) / h ** 2
    return D.tocsr()


def _trapezoid_weights_1d(N: int, h: float) -> np.ndarray:
    w = np.full(N, h)
    w[0] = w[-1] = 0.5 * h
    return w


class Grid:
    """
    Uniform tensor grid on a Domain.

    Args:
        domain: Base domain
        nodes_per_axis: Node count per axis (int for all axes), each >= 9
    """

    def __init__(self, domain: Domain, nodes_per_axis: Union[int, Sequence[int]]):
        if np.ndim(nodes_per_axis) == 0:
            nodes_per_axis = (int(nodes_per_axis),) * domain.dim
        shape = tuple(int(n) for n in nodes_per_axis)
        if len(shape) != domain.dim:
            raise ConfigurationError("nodes_per_axis must match the domain dimension")
        if min(shape) < MIN_NODES_PER_AXIS:
            raise ConfigurationError(
                f"grid too small: {shape}, need >= {MIN_NODES_PER_AXIS} nodes per axis"
            )
        self.domain = domain
        self.shape = shape
        self.axes: List[np.ndarray] = [
            np.linspace(lo, up, n) for lo, up, n in zip(domain.lower, domain.upper, shape)
        ]
        self.spacing: Tuple[float, ...] = tuple(
            (up - lo) / (n - 1) for lo, up, n in zip(domain.lower, domain.upper, shape)
        )
        self._operators: Dict[Tuple, sp.csr_matrix] = {}

    def __repr__(self) -> str:
        return f"Grid(shape={self.shape}, lower={self.domain.lower}, upper={self.domain.upper})"

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def h(self) -> float:
        return max(self.spacing)

    @cached_property
    def multi_index(self) -> np.ndarray:
        return np.indices(self.shape).reshape(self.dim, -1).T

    @cached_property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        idx = self.multi_index
        return np.any((idx == 0) | (idx == np.asarray(self.shape) - 1), axis=1)

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask)

    @cached_property
    def quadrature_weights(self) -> np.ndarray:
        weights = np.ones(1)
        for n, h in zip(self.shape, self.spacing):
            weights = np.multiply.outer(weights, _trapezoid_weights_1d(n, h)).ravel()
        return weights

    @cached_property
    def facets(self) -> FacetSet:
        idx = self.multi_index
        nodes, axes, sides, weights = [], [], [], []
        trap = [_trapezoid_weights_1d(n, h) for n, h in zip(self.shape, self.spacing)]
        for a in range(self.dim):
            for side, position in ((-1, 0), (1, self.shape[a] - 1)):
                on_face = np.flatnonzero(idx[:, a] == position)
                w = np.ones(len(on_face))
                for j in range(self.dim):
                    if j != a:
                        w = w * trap[j][idx[on_face, j]]
                nodes.append(on_face)
                axes.append(np.full(len(on_face), a))
                sides.append(np.full(len(on_face), side))
                weights.append(w)
        nodes = np.concatenate(nodes)
        axes = np.concatenate(axes)
        sides = np.concatenate(sides)
        normals = np.zeros((len(nodes), self.dim))
        normals[np.arange(len(nodes)), axes] = sides
        return FacetSet(
            nodes=nodes,
            axis=axes,
            side=sides,
            normals=normals,
            weights=np.concatenate(weights),
            points=self.points[nodes],
        )

    @cached_property
    def boundary_measure(self) -> float:
        return float(np.sum(self.facets.weights))

    # ------------------------------------------------------------------
    # Sparse operators
    # ------------------------------------------------------------------

    def _kron_axis(self, matrix: sp.spmatrix, axis: int) -> sp.csr_matrix:
        result = None
        for k, n in enumerate(self.shape):
            factor = matrix if k == axis else sp.identity(n, format="csr")
            result = factor if result is None else sp.kron(result, factor, format="csr")
        return result.tocsr()

    def first_derivative(self, axis: int) -> sp.csr_matrix:
        key = ("d1", axis)
        if key not in self._operators:
            self._operators[key] = self._kron_axis(
                _first_derivative_1d(self.shape[axis], self.spacing[axis]), axis
            )
        return self._operators[key]

    def second_derivative(self, i: int, j: int) -> sp.csr_matrix:
        """d^2/dx_i dx_j; mixed partials are products of first differences, which commute."""
        i, j = min(i, j), max(i, j)
        key = ("d2", i, j)
        if key not in self._operators:
            if i == j:
                op = self._kron_axis(_second_derivative_1d(self.shape[i], self.spacing[i]), i)
            else:
                op = (self.first_derivative(i) @ self.first_derivative(j)).tocsr()
            self._operators[key] = op
        return self._operators[key]

    def laplacian(self) -> sp.csr_matrix:
        key = ("lap",)
        if key not in self._operators:
            op = self.second_derivative(0, 0)
            for i in range(1, self.dim):
                op = op + self.second_derivative(i, i)
            self._operators[key] = op.tocsr()
        return self._operators[key]

    def refine(self) -> "Grid":
        """Dyadic refinement: halves the spacing, keeps the old nodes."""
        return Grid(self.domain, tuple(2 * n - 1 for n in self.shape))

    def sample(self, func: Callable[[np.ndarray], np.ndarray]) -> "ScalarField":
        return ScalarField(self, func(self.points))


# ============================================================================
# FIELDS
# ============================================================================


def _frozen_values(values, expected: int, label: str) -> np.ndarray:
    arr = np.array(values).ravel()
    if arr.size != expected:
        raise DomainError(f"{label} has {arr.size} values, grid expects {expected}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{label} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField:
    """One value (real or complex) per grid node."""
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_values(self.values, self.grid.size, "ScalarField"))

    @classmethod
    def from_function(cls, grid: Grid, func: Callable[[np.ndarray], np.ndarray]) -> "ScalarField":
        return cls(grid, func(grid.points))

    @classmethod
    def constant(cls, grid: Grid, value: complex = 0.0) -> "ScalarField":
        return cls(grid, np.full(grid.size, value))

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def interior_values(self) -> np.ndarray:
        return self.values[self.grid.interior_nodes]

    def sup_norm(self, interior_only: bool = False) -> float:
        vals = self.interior_values() if interior_only else self.values
        return float(np.max(np.abs(vals))) if vals.size else 0.0

    def l2_norm(self) -> float:
        return float(np.sqrt(integrate_interior(ScalarField(self.grid, np.abs(self.values) ** 2)).real))

    def trace(self) -> "BoundaryField":
        return BoundaryField(self.grid, self.values[self.grid.facets.nodes])

    def map(self, func: Callable[[np.ndarray], np.ndarray]) -> "ScalarField":
        return ScalarField(self.grid, func(self.values))

    def _other(self, other):
        return other.values if isinstance(other, ScalarField) else other

    def __add__(self, other):
        return ScalarField(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - self._other(other))

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return ScalarField(self.grid, self.values / self._other(other))

    def __neg__(self):
        return ScalarField(self.grid, -self.values)


@dataclass(frozen=True, eq=False)
class BoundaryField:
    """One value per boundary facet entry (see FacetSet)."""
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "values", _frozen_values(self.values, len(self.grid.facets), "BoundaryField")
        )

    @classmethod
    def from_function(cls, grid: Grid, func: Callable[[np.ndarray], np.ndarray]) -> "BoundaryField":
        return cls(grid, func(grid.facets.points))

    @classmethod
    def zeros(cls, grid: Grid, dtype=float) -> "BoundaryField":
        return cls(grid, np.zeros(len(grid.facets), dtype=dtype))

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def node_values(self) -> Tuple[np.ndarray, np.ndarray]:
        """(boundary node indices, values averaged over incident faces)."""
        nodes = self.grid.facets.nodes
        unique, inverse = np.unique(nodes, return_inverse=True)
        counts = np.bincount(inverse)
        if self.is_complex:
            total = np.bincount(inverse, self.values.real) + 1j * np.bincount(inverse, self.values.imag)
        else:
            total = np.bincount(inverse, self.values)
        return unique, total / counts

    def extend(self) -> np.ndarray:
        """Full-grid vector with these Dirichlet values and zero interior."""
        nodes, vals = self.node_values()
        full = np.zeros(self.grid.size, dtype=vals.dtype)
        full[nodes] = vals
        return full

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def face_arrays(self) -> List[Tuple[int, np.ndarray]]:
        """Per face: (normal axis, values shaped over the tangential axes)."""
        facets = self.grid.facets
        out = []
        for a in range(self.grid.dim):
            tangential = tuple(n for j, n in enumerate(self.grid.shape) if j != a)
            for side in (-1, 1):
                mask = (facets.axis == a) & (facets.side == side)
                out.append((a, self.values[mask].reshape(tangential)))
        return out

    def surrogate_norm(self) -> float:
        """
        Discrete stand-in for a C^2 boundary norm: the largest sup-norm of the
        values and of their first and second divided differences along each face.
        """
        norm = self.sup_norm()
        for a, arr in self.face_arrays():
            tangential_spacing = [h for j, h in enumerate(self.grid.spacing) if j != a]
            for k, h in enumerate(tangential_spacing):
                first = np.diff(arr, n=1, axis=k) / h
                second = np.diff(arr, n=2, axis=k) / h ** 2
                norm = max(norm, float(np.max(np.abs(first))), float(np.max(np.abs(second))))
        return norm

    def __add__(self, other):
        return BoundaryField(self.grid, self.values + (other.values if isinstance(other, BoundaryField) else other))

    def __sub__(self, other):
        return BoundaryField(self.grid, self.values - (other.values if isinstance(other, BoundaryField) else other))

    def __mul__(self, other):
        return BoundaryField(self.grid, self.values * (other.values if isinstance(other, BoundaryField) else other))

    __rmul__ = __mul__


# ============================================================================
# DIFFERENCE OPERATORS AND QUADRATURE
# ============================================================================


def gradient_fd(field: ScalarField) -> np.ndarray:
    """Second-order gradient, shape (size, d)."""
    grid = field.grid
    return np.stack([grid.first_derivative(i) @ field.values for i in range(grid.dim)], axis=-1)


def hessian_fd(field: ScalarField) -> np.ndarray:
    """Second-order Hessian, shape (size, d, d), symmetric by construction."""
    grid = field.grid
    d = grid.dim
    out = np.empty((grid.size, d, d), dtype=field.values.dtype)
    for i in range(d):
        for j in range(i, d):
            out[:, i, j] = out[:, j, i] = grid.second_derivative(i, j) @ field.values
    return out


def laplacian_fd(field: ScalarField) -> ScalarField:
    return ScalarField(field.grid, field.grid.laplacian() @ field.values)


def divergence_fd(grid: Grid, vector: np.ndarray) -> np.ndarray:
    """Divergence of a nodal vector field of shape (size, d)."""
    return sum(grid.first_derivative(i) @ vector[:, i] for i in range(grid.dim))


def normal_derivative(field: ScalarField) -> BoundaryField:
    """
    Outward normal derivative on every facet entry, using the one-sided
    three-point stencil along the face normal.
    """
    grid = field.grid
    facets = grid.facets
    values = np.zeros(len(facets), dtype=field.values.dtype)
    for a in range(grid.dim):
        mask = facets.axis == a
        derivative = grid.first_derivative(a) @ field.values
        values[mask] = facets.side[mask] * derivative[facets.nodes[mask]]
    return BoundaryField(grid, values)


def integrate_interior(field: ScalarField) -> complex:
    """Composite trapezoidal rule over the base domain."""
    total = field.grid.quadrature_weights @ field.values
    return total if np.iscomplexobj(total) else float(total)


def integrate_boundary(bfield: BoundaryField) -> complex:
    """Composite trapezoidal rule face by face; corners weigh 1/2 per incident face."""
    total = bfield.grid.facets.weights @ bfield.values
    return total if np.iscomplexobj(total) else float(total)
