"""
Step 4: Complex geometric optics (CGO) solutions of the first linearization

A CGO solution has the form v = e^{x.zeta/h} (e^{Phi} + r) with zeta.zeta = 0.
Pairs (zeta_1, zeta_2) with zeta_1 + zeta_2 = i h xi make products v_1 v_2
concentrate on e^{i x.xi}, which turns integral identities into Fourier data.

Base dimension d >= 3 uses the pair with an O(1) real part; d = 2 uses the
harmonic-exponential pair zeta = (h/2)(+-|xi| xi_perp + i xi), for which
zeta/h does not depend on h, together with the Schroedinger reduction
v = g / sqrt(c), (Lap - q) g = 0, q = Lap sqrt(c) / sqrt(c).
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import null_space
from tqdm import tqdm

from minsurf_lab.config import (
    CAUCHY_QUADRATURE_STEP,
    CAUCHY_RADIUS_FACTOR,
    CAUCHY_TAIL_TOLERANCE,
    CGO_RESOLUTION_BOUND,
    EXPONENT_CAP,
)
from minsurf_lab.conformal_geometry import ConformalFactor, build_scenario
from minsurf_lab.exceptions import CGOError, ConfigurationError, DomainError
from minsurf_lab.grid import BoundaryField, Grid, ScalarField, integrate_interior
from minsurf_lab.linearization import (
    LinearizedOperator,
    adjoint_solution,
    dirichlet_solve,
    interior_blocks,
)

logger = logging.getLogger(__name__)

ALGEBRA_TOLERANCE = 1e-14
PATHS = ("operator", "schrodinger")


# ============================================================================
# ZETA PAIRS
# ============================================================================

@dataclass(frozen=True)
class ZetaPair:
    """
    Complex frequencies of a CGO pair.

    For d >= 3, mu1, mu2 are orthonormal and orthogonal to xi. For d = 2,
    mu1 = xi_perp / |xi| and mu2 = xi / |xi| span the plane.
    """
    xi: np.ndarray
    h: float
    mu1: np.ndarray
    mu2: np.ndarray
    zeta1: np.ndarray
    zeta2: np.ndarray

    @property
    def dimension(self) -> int:
        return len(self.xi)

    @property
    def zeta0(self) -> np.ndarray:
        """h -> 0 limit direction mu1 + i mu2 of zeta1 (zeta2 tends to -zeta0)."""
        return self.mu1 + 1j * self.mu2

    def algebra_errors(self) -> Tuple[float, float, float]:
        """(|zeta1.zeta1|, |zeta2.zeta2|, |zeta1 + zeta2 - i h xi|) with the bilinear dot product."""
        return (
            float(abs(np.sum(self.zeta1 * self.zeta1))),
            float(abs(np.sum(self.zeta2 * self.zeta2))),
            float(np.max(np.abs(self.zeta1 + self.zeta2 - 1j * self.h * self.xi))),
        )


def _canonical_sign(xi: np.ndarray) -> int:
    """+1 if the first nonzero component of xi is positive (or xi = 0), else -1."""
    nonzero = np.flatnonzero(xi)
    return 1 if nonzero.size == 0 or xi[nonzero[0]] > 0 else -1


def orthonormal_frame(xi: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Orthonormal mu1, mu2 orthogonal to xi (d >= 3).

    Frames of xi and -xi differ by the sign of mu2, so the pair built for -xi
    is the complex conjugate of the pair built for xi.
    """
    xi = np.asarray(xi, dtype=float)
    d = len(xi)
    if d < 3:
        raise ConfigurationError(f"an orthogonal frame needs base dimension >= 3, got {d}")
    sign = _canonical_sign(xi)
    if not np.any(xi):
        basis = np.eye(d)[:, :2]
    else:
        basis = null_space((sign * xi)[None, :])
    mu1, mu2 = basis[:, 0], basis[:, 1]
    return mu1, sign * mu2


def make_zeta_pair(
    xi: Sequence[float],
    h: float,
    frame: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> ZetaPair:
    """
    Build zeta1, zeta2 with zeta_j . zeta_j = 0 and zeta1 + zeta2 = i h xi.

    Args:
        xi: Frequency in R^d
        h: Semiclassical parameter, h |xi| < 2
        frame: Orthonormal (mu1, mu2) orthogonal to xi for d >= 3 (derived when None)

    Returns:
        ZetaPair
    """
    xi = np.asarray(xi, dtype=float)
    d = len(xi)
    if h <= 0:
        raise DomainError(f"h must be positive, got {h}")
    if d < 2:
        raise ConfigurationError("CGO pairs need base dimension >= 2")
    norm = float(np.linalg.norm(xi))
    if h * norm >= 2.0:
        raise DomainError(f"h |xi| = {h * norm:.4g} must stay below 2")

    if d == 2:
        if norm == 0.0:
            zero = np.zeros(2, dtype=complex)
            return ZetaPair(xi, h, np.array([1.0, 0.0]), np.array([0.0, 1.0]), zero, zero.copy())
        unit = xi / norm
        perp = np.array([-unit[1], unit[0]])
        zeta1 = 0.5 * h * (norm * perp + 1j * xi)
        zeta2 = 0.5 * h * (-norm * perp + 1j * xi)
        return ZetaPair(xi, h, perp, unit, zeta1, zeta2)

    mu1, mu2 = frame if frame is not None else orthonormal_frame(xi)
    mu1, mu2 = np.asarray(mu1, dtype=float), np.asarray(mu2, dtype=float)
    gram = np.array([[mu1 @ mu1, mu1 @ mu2], [mu2 @ mu1, mu2 @ mu2]])
    if np.max(np.abs(gram - np.eye(2))) > 1e-12 or abs(mu1 @ xi) + abs(mu2 @ xi) > 1e-12 * max(norm, 1.0):
        raise DomainError("frame must be orthonormal and orthogonal to xi")
    root = np.sqrt(1.0 - h * h * norm * norm / 4.0)
    zeta1 = mu1 + 0.5j * h * xi + 1j * root * mu2
    zeta2 = -mu1 + 0.5j * h * xi - 1j * root * mu2
    return ZetaPair(xi, h, mu1, mu2, zeta1, zeta2)


def xi_grid(radius: float, step: float, dimension: int, half: bool = False) -> np.ndarray:
    """
    Lattice frequencies step * k with |xi| <= radius.

    Args:
        radius: Largest |xi|
        step: Lattice spacing
        dimension: Base dimension d
        half: Keep xi = 0 and one of every +-xi pair only

    Returns:
        Array of shape (count, d), sorted by |xi| then lexicographically
    """
    K = int(np.floor(radius / step + 1e-12))
    axis = np.arange(-K, K + 1) * step
    points = np.stack(np.meshgrid(*([axis] * dimension), indexing="ij"), axis=-1).reshape(-1, dimension)
    points = points[np.linalg.norm(points, axis=1) <= radius + 1e-12]
    if half:
        points = np.array([p for p in points if _canonical_sign(p) > 0])
    order = np.lexsort(tuple(points[:, k] for k in reversed(range(dimension))) + (np.linalg.norm(points, axis=1),))
    return points[order]


# ============================================================================
# CAUCHY TRANSFORM AND PHASES
# ============================================================================

FieldLike = Union[Callable[[np.ndarray], np.ndarray], ScalarField]


def _as_callable(f: FieldLike) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(f, ScalarField):
        interpolator = RegularGridInterpolator(
            tuple(f.grid.axes), f.as_array(), bounds_error=False, fill_value=0.0
        )
        return interpolator
    return f


def _default_radius(points: np.ndarray, step: float = CAUCHY_QUADRATURE_STEP) -> float:
    diameter = float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))
    return CAUCHY_RADIUS_FACTOR * max(diameter, step)


def rim_magnitude(
    func: Callable[[np.ndarray], np.ndarray],
    zeta0: np.ndarray,
    points: np.ndarray,
    radius: float,
) -> float:
    """max |func| on the circle of the given radius in the zeta0 plane around the corners and center of the point set."""
    e1, e2 = zeta0.real, zeta0.imag
    angles = np.linspace(0.0, 2.0 * np.pi, 64, endpoint=False)
    ring = np.cos(angles)[:, None] * e1 + np.sin(angles)[:, None] * e2
    corners = np.stack([points.min(axis=0), points.max(axis=0), points.mean(axis=0)])
    return max(float(np.max(np.abs(func(x - radius * ring)))) for x in corners)


def cauchy_transform(
    f: FieldLike,
    zeta0: Sequence[complex],
    points: np.ndarray,
    step: float = CAUCHY_QUADRATURE_STEP,
    radius: Optional[float] = None,
    max_samples: int = 2_000_000,
) -> np.ndarray:
    """
    (N^{-1} f)(x) = 1/(2 pi) int_{R^2} f(x - y1 Re zeta0 - y2 Im zeta0) / (y1 + i y2) dy

    Midpoint quadrature on square cells centered at step * (i, j) inside a
    disk of the given radius. The central cell integral of 1/(y1 + i y2) is
    zero by symmetry, so its weight is 0; reflecting the cell set leaves it
    unchanged, which makes the result odd in zeta0.

    Args:
        f: Callable on points of shape (N, d), or a ScalarField (zero outside its grid)
        zeta0: Complex direction with orthonormal real and imaginary parts
        points: Output points, shape (P, d)
        step: Cell size
        radius: Truncation radius (CAUCHY_RADIUS_FACTOR x diameter of the point set when None)
        max_samples: Evaluations of f per batch

    Returns:
        Complex array of shape (P,)
    """
    zeta0 = np.asarray(zeta0, dtype=complex)
    e1, e2 = zeta0.real, zeta0.imag
    if abs(e1 @ e1 - 1.0) > 1e-12 or abs(e2 @ e2 - 1.0) > 1e-12 or abs(e1 @ e2) > 1e-12:
        raise DomainError("Re zeta0 and Im zeta0 must be orthonormal")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if radius is None:
        radius = _default_radius(points, step)
    func = _as_callable(f)

    K = int(np.ceil(radius / step))
    k = np.arange(-K, K + 1) * step
    Y1, Y2 = np.meshgrid(k, k, indexing="ij")
    inside = Y1 ** 2 + Y2 ** 2 <= radius ** 2
    y1, y2 = Y1[inside], Y2[inside]
    z = y1 + 1j * y2
    weights = np.zeros(z.shape, dtype=complex)
    nonzero = z != 0
    weights[nonzero] = step * step / (2.0 * np.pi * z[nonzero])
    offsets = y1[:, None] * e1 + y2[:, None] * e2

    M, d = len(weights), points.shape[1]
    rows = max(1, max_samples // M)
    out = np.empty(len(points), dtype=complex)
    for start in range(0, len(points), rows):
        x = points[start:start + rows]
        samples = np.asarray(func((x[:, None, :] - offsets[None, :, :]).reshape(-1, d)))
        out[start:start + rows] = samples.reshape(len(x), M) @ weights

    tail = rim_magnitude(func, zeta0, points, radius)
    if tail > CAUCHY_TAIL_TOLERANCE:
        logger.warning("⚠ Cauchy transform support leaks past radius %.3g (integrand %.2e at the rim)", radius, tail)
    return out


def phase_source(c: ConformalFactor, zeta0: Sequence[complex], side: str = "forward") -> Callable[[np.ndarray], np.ndarray]:
    """-1/2 zeta0 . b for the forward operator, +1/2 zeta0 . b for its adjoint."""
    zeta0 = np.asarray(zeta0, dtype=complex)
    n = c.dimension
    sign = {"forward": -0.5, "adjoint": 0.5}.get(side)
    if sign is None:
        raise ConfigurationError(f"unknown phase side '{side}'")

    def source(x_prime: np.ndarray) -> np.ndarray:
        b = (n - 1) * c.base_gradient(x_prime) / (2.0 * c.base_value(x_prime)[..., None])
        return sign * (b @ zeta0)

    return source


def closed_form_phase(c: ConformalFactor, points: np.ndarray) -> np.ndarray:
    """-((n-1)/4) log c(x', 0), the phase whenever b is a gradient field decaying at infinity."""
    return -((c.dimension - 1) / 4.0) * np.log(c.base_value(points))


def drift_decays(c: ConformalFactor, points: np.ndarray, zeta0: Sequence[complex]) -> bool:
    """
    True when the phase source falls below CAUCHY_TAIL_TOLERANCE on the Cauchy
    truncation rim. Only then does the Cauchy phase coincide with the closed form;
    a drift that persists at infinity (e.g. c = e^{kappa x_1}) leaves the
    closed form as the only valid phase.
    """
    zeta0 = np.asarray(zeta0, dtype=complex)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return rim_magnitude(phase_source(c, zeta0), zeta0, points, _default_radius(points)) <= CAUCHY_TAIL_TOLERANCE


def cgo_phase(
    c: ConformalFactor,
    points: np.ndarray,
    zeta0: Sequence[complex],
    side: str = "forward",
    method: str = "cauchy",
    **quadrature,
) -> np.ndarray:
    """
    Phase Phi with zeta0 . grad Phi = -1/2 zeta0 . b (forward) or +1/2 zeta0 . b (adjoint).

    Args:
        c: Conformal factor
        points: Base points, shape (P, d)
        zeta0: Complex direction, orthonormal real and imaginary parts
        side: 'forward' or 'adjoint'
        method: 'cauchy' (quadrature) or 'closed-form'
        **quadrature: step / radius passed to cauchy_transform

    Returns:
        Complex array of shape (P,)
    """
    if method == "closed-form":
        phase = closed_form_phase(c, points).astype(complex)
        return phase if side == "forward" else -phase
    if method != "cauchy":
        raise ConfigurationError(f"unknown phase method '{method}'")
    return cauchy_transform(phase_source(c, zeta0, side), zeta0, points, **quadrature)


@dataclass(frozen=True)
class PhaseReport:
    cancellation: float        # max |Phi(zeta0) + Phi_adj(-zeta0)|
    closed_form_gap: float     # max |Phi(zeta0) - closed form|
    phase_scale: float         # max |Phi(zeta0)|


def phase_cancellation(
    c: ConformalFactor,
    points: np.ndarray,
    zeta0: Sequence[complex],
    **quadrature,
) -> PhaseReport:
    """Pair the forward phase at zeta0 with the adjoint phase at -zeta0; their sum vanishes."""
    zeta0 = np.asarray(zeta0, dtype=complex)
    forward = cgo_phase(c, points, zeta0, side="forward", **quadrature)
    adjoint = cgo_phase(c, points, -zeta0, side="adjoint", **quadrature)
    closed = closed_form_phase(c, points)
    return PhaseReport(
        cancellation=float(np.max(np.abs(forward + adjoint))),
        closed_form_gap=float(np.max(np.abs(forward - closed))),
        phase_scale=float(np.max(np.abs(forward))),
    )


# ============================================================================
# CGO SOLUTIONS
# ============================================================================

@dataclass
class CGOSolution:
    """Exact discrete solution driven by the ideal CGO trace e^{x.zeta/h} e^{Phi}."""
    zeta: np.ndarray
    h: float
    phi: ScalarField
    trace: BoundaryField
    interior: ScalarField
    remainder_norm: float
    relative_remainder: float
    path: str
    resolution: float = 0.0

    @property
    def resolved(self) -> bool:
        return self.resolution <= CGO_RESOLUTION_BOUND


def schrodinger_potential(c: ConformalFactor, points: np.ndarray) -> np.ndarray:
    """q = Lap sqrt(c) / sqrt(c) = sum_k [d_kk c / (2c) - (d_k c)^2 / (4 c^2)] at (x', 0)."""
    value = c.base_value(points)
    gradient = c.base_gradient(points)
    laplacian = np.trace(c.base_hessian(points), axis1=-2, axis2=-1)
    return laplacian / (2.0 * value) - np.sum(gradient ** 2, axis=-1) / (4.0 * value ** 2)


def cgo_exponent(grid: Grid, zeta: np.ndarray, h: float) -> np.ndarray:
    """
    x.zeta/h with its real part centered at the domain center; the imaginary
    part is kept uncentered so products of a pair reproduce e^{i x.xi}.
    """
    center = grid.domain.center
    exponent = (grid.points - center) @ zeta / h + 1j * np.imag(center @ zeta / h)
    peak = float(np.max(np.abs(exponent.real)))
    if peak > EXPONENT_CAP:
        raise CGOError(f"h too small for grid: |Re x.zeta/h| reaches {peak:.1f} > {EXPONENT_CAP:.0f}")
    return exponent


def cgo_resolution(grid: Grid, zeta: np.ndarray, h: float) -> float:
    """Grid step times |zeta|/h: the phase advance of e^{x.zeta/h} per cell."""
    return float(grid.h * np.linalg.norm(np.asarray(zeta, dtype=complex)) / h)


def flat_reference(c: ConformalFactor, grid: Grid) -> LinearizedOperator:
    """First linearization of the constant factor (the plain Laplacian) on the same grid."""
    return LinearizedOperator(build_scenario("constant", c.dimension), grid)


def build_cgo(
    c: ConformalFactor,
    grid: Grid,
    zeta: np.ndarray,
    h: float,
    zeta0: Optional[np.ndarray] = None,
    path: Optional[str] = None,
    phase_method: str = "closed-form",
    op: Optional[LinearizedOperator] = None,
    reference: Optional[LinearizedOperator] = None,
) -> CGOSolution:
    """
    Solve the first linearization with the ideal CGO trace and measure the remainder.

    The remainder is taken against the discrete flat solution v_flat with trace
    e^{x.zeta/h}: r = e^{-x.zeta/h} (v - e^{Phi} v_flat). The error of the grid in
    representing e^{x.zeta/h} itself cancels, and r vanishes for constant c.

    Args:
        c: Admissible conformal factor
        grid: Base grid
        zeta: Complex frequency with zeta.zeta = 0
        h: Semiclassical parameter
        zeta0: Phase direction (h -> 0 limit of zeta); needed for the Cauchy phase
        path: 'operator' (L v = 0) or 'schrodinger' (d = 2 default)
        phase_method: 'closed-form' or 'cauchy' (d >= 3)
        op: Prebuilt linearized operator
        reference: Prebuilt flat operator (flat_reference)

    Returns:
        CGOSolution
    """
    zeta = np.asarray(zeta, dtype=complex)
    if abs(np.sum(zeta * zeta)) > 1e-10 * max(1.0, float(np.sum(np.abs(zeta) ** 2))):
        raise DomainError("zeta must satisfy zeta . zeta = 0")
    d = grid.dim
    path = path or ("schrodinger" if d == 2 else "operator")
    if path not in PATHS:
        raise ConfigurationError(f"unknown CGO path '{path}', expected one of {PATHS}")

    exponent = cgo_exponent(grid, zeta, h)
    if d == 2 or phase_method == "closed-form":
        phi = closed_form_phase(c, grid.points).astype(complex)
    else:
        if zeta0 is None:
            raise ConfigurationError("the Cauchy phase needs zeta0")
        phi = cgo_phase(c, grid.points, zeta0, method="cauchy")
    ideal = np.exp(exponent + phi)
    trace = ScalarField(grid, ideal).trace()

    if path == "operator":
        op = op if op is not None and op.factor is c and op.grid is grid else LinearizedOperator(c, grid)
        interior = op.dirichlet_solve(boundary=trace)
    else:
        root = np.sqrt(c.base_value(grid.points))
        matrix = grid.laplacian() - sp.diags(schrodinger_potential(c, grid.points))
        g = dirichlet_solve(grid, interior_blocks(grid, matrix), boundary=trace * root[grid.facets.nodes])
        interior = ScalarField(grid, g.values / root)

    reference = reference if reference is not None and reference.grid is grid else flat_reference(c, grid)
    baseline = reference.dirichlet_solve(boundary=ScalarField(grid, np.exp(exponent)).trace())
    envelope = ScalarField(grid, np.exp(phi))
    remainder = ScalarField(grid, np.exp(-exponent) * (interior.values - envelope.values * baseline.values))
    remainder_norm = remainder.l2_norm()
    solution = CGOSolution(
        zeta=zeta,
        h=h,
        phi=ScalarField(grid, phi),
        trace=trace,
        interior=interior,
        remainder_norm=remainder_norm,
        relative_remainder=remainder_norm / envelope.l2_norm(),
        path=path,
        resolution=cgo_resolution(grid, zeta, h),
    )
    if not solution.resolved:
        logger.debug("CGO zeta/h=%s under-resolved: grid.h |zeta|/h = %.3f", np.round(zeta / h, 4), solution.resolution)
    logger.debug("CGO zeta/h=%s: relative remainder %.3e (%s path)", np.round(zeta / h, 4), solution.relative_remainder, path)
    return solution


def build_cgo_pair(
    c: ConformalFactor,
    grid: Grid,
    pair: ZetaPair,
    path: Optional[str] = None,
    phase_method: str = "closed-form",
    op: Optional[LinearizedOperator] = None,
    reference: Optional[LinearizedOperator] = None,
) -> Tuple[CGOSolution, CGOSolution]:
    """Both members of a pair; xi = 0 in d = 2 gives the constant solutions."""
    reference = reference if reference is not None else flat_reference(c, grid)
    first = build_cgo(c, grid, pair.zeta1, pair.h, pair.zeta0, path, phase_method, op, reference)
    second = build_cgo(c, grid, pair.zeta2, pair.h, -pair.zeta0, path, phase_method, op, reference)
    return first, second


# ============================================================================
# FOURIER PROBING
# ============================================================================

def fourier_probe(
    target: ScalarField,
    xi_values: np.ndarray,
    h: float,
    c: ConformalFactor,
    weighted: bool = True,
    path: Optional[str] = None,
) -> pd.DataFrame:
    """
    Probe a field with CGO products.

    Args:
        target: Field on the base grid
        xi_values: Frequencies, shape (count, d)
        h: Semiclassical parameter
        c: Admissible conformal factor defining the first linearization
        weighted: Multiply by the adjoint weight v0 (v0 v1 v2 ~ e^{i x.xi})
        path: CGO path passed to build_cgo

    Returns:
        DataFrame with xi components, probe = int target v0 v1 v2, reference =
        int target e^{i x.xi} (real/imaginary columns) and the pair remainders
    """
    grid = target.grid
    op = LinearizedOperator(c, grid)
    reference = flat_reference(c, grid)
    weight = adjoint_solution(c, grid).values if weighted else np.ones(grid.size)
    rows = []
    for xi in tqdm(np.atleast_2d(xi_values), desc="fourier probe", disable=None, leave=False):
        pair = make_zeta_pair(xi, h)
        first, second = build_cgo_pair(c, grid, pair, path=path, op=op, reference=reference)
        probe = integrate_interior(ScalarField(grid, target.values * weight * first.interior.values * second.interior.values))
        fourier = integrate_interior(ScalarField(grid, target.values * np.exp(1j * grid.points @ xi)))
        row = {f"xi{k + 1}": float(xi[k]) for k in range(grid.dim)}
        row.update({
            "probe_re": float(np.real(probe)),
            "probe_im": float(np.imag(probe)),
            "reference_re": float(np.real(fourier)),
            "reference_im": float(np.imag(fourier)),
            "remainder_1": first.relative_remainder,
            "remainder_2": second.relative_remainder,
        })
        rows.append(row)
    return pd.DataFrame(rows)


def remainder_sweep(
    c: ConformalFactor,
    grid: Grid,
    xi: Sequence[float],
    h_values: Sequence[float],
    path: Optional[str] = None,
) -> pd.DataFrame:
    """
    Relative CGO remainder of both pair members over a sweep of h (descending).

    Rows whose grid.h |zeta|/h exceeds CGO_RESOLUTION_BOUND are kept but marked
    resolved = False; the grid cannot represent e^{x.zeta/h} there.
    """
    op = LinearizedOperator(c, grid)
    reference = flat_reference(c, grid)
    rows = []
    for h in h_values:
        pair = make_zeta_pair(xi, h)
        first, second = build_cgo_pair(c, grid, pair, path=path, op=op, reference=reference)
        rows.append({
            "h": float(h),
            "remainder_1": first.relative_remainder,
            "remainder_2": second.relative_remainder,
            "remainder": max(first.relative_remainder, second.relative_remainder),
            "resolution": max(first.resolution, second.resolution),
            "resolved": first.resolved and second.resolved,
        })
    return pd.DataFrame(rows)
