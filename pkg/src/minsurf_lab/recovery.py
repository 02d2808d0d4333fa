"""
Step 5: Recovery of d_n^3 c(x', 0) from boundary data and theorem-consistency checks

For a single admissible factor the second mixed derivative of the DN map along
boundary data f_1, f_2 determines

    int_boundary v0 d_nu w dS = int_Omega t v0 v_1 v_2 dx',    t = (n-1) d_n^3 c / (2c)

where v_j solve the first linearization with traces f_j. With CGO traces the
products v0 v_1 v_2 concentrate on e^{i x.xi}, so the boundary functionals are
noisy Fourier data of t. They are inverted onto a periodic Fourier basis with
Tikhonov regularization, and t is converted back to d_n^3 c.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from minsurf_lab.cgo import build_cgo_pair, flat_reference, make_zeta_pair, xi_grid
from minsurf_lab.config import (
    FIELD_TOLERANCE,
    FOURIER_TOLERANCE,
    SCALING_TOLERANCE,
    ExperimentConfig,
)
from minsurf_lab.conformal_geometry import ConformalFactor, build_scenario
from minsurf_lab.convergence import noise_floor
from minsurf_lab.exceptions import CGOError, ConfigurationError
from minsurf_lab.forward_solver import NewtonConfig, boundary_from_shape, dn_map
from minsurf_lab.grid import BoundaryField, Domain, Grid, ScalarField, integrate_boundary, integrate_interior
from minsurf_lab.linearization import (
    HigherOrderReport,
    LinearizedOperator,
    SolutionCache,
    adjoint_solution,
    divided_difference,
    top_coefficient_weight,
    verify_higher_order,
)
from minsurf_lab.regularization import TikhonovResult, regularized_inverse, tikhonov_solve
from minsurf_lab.surfaces import shape_from_spec

logger = logging.getLogger(__name__)

TAYLOR_ORDERS = 5
TAYLOR_MATCH_TOLERANCE = 1e-12
ILL_CONDITIONED = 1e12
STENCIL_MARGIN = 0.999       # keeps the largest stencil node strictly inside the small-data ball

# Catalog parameter scaling d_n^3 c linearly, per scenario
AMPLITUDE_PARAMETER = {
    "bump-cubic": "alpha",
    "gauss-profile": "alpha",
    "quartic": "gamma",
}


# ============================================================================
# EXPERIMENT SETUP
# ============================================================================

def build_grid(config: ExperimentConfig, level: int = -1) -> Grid:
    """Cube base grid of the configured refinement level (finest by default)."""
    domain = Domain.cube(config.dimension - 1, config.domain_lower, config.domain_upper)
    return Grid(domain, config.grid_sizes[level])


def newton_config(config: ExperimentConfig) -> NewtonConfig:
    return NewtonConfig(
        residual_tolerance=config.newton_tolerance,
        max_iterations=config.max_iterations,
        continuation_steps=config.continuation_steps,
        small_data_bound=config.small_data_bound,
    )


def build_factors(config: ExperimentConfig) -> Tuple[ConformalFactor, Optional[ConformalFactor]]:
    """(c1, c2) from the config; c2 is None without a comparison scenario."""
    c1 = build_scenario(config.scenario, config.dimension, **config.scenario_params)
    c2 = None
    if config.comparison_scenario is not None:
        c2 = build_scenario(config.comparison_scenario, config.dimension, **config.comparison_params)
    return c1, c2


def unit_direction(f: BoundaryField) -> BoundaryField:
    """f scaled to surrogate norm 1."""
    norm = f.surrogate_norm()
    if norm == 0.0:
        raise ConfigurationError("direction has zero surrogate norm")
    return f * (1.0 / norm)


def probe_directions(config: ExperimentConfig, grid: Grid) -> List[BoundaryField]:
    """Unit-norm boundary directions of config.test_functions."""
    return [
        unit_direction(boundary_from_shape(grid, shape_from_spec(spec, grid.dim, config.seed)))
        for spec in config.test_functions
    ]


def stencil_eps(config: ExperimentConfig, order: int, levels: int = 1) -> float:
    """
    Largest eps <= derivative_eps keeping every node of an order-m stencil over
    unit directions (and its 2^(levels-1) eps companion) inside the small-data ball.
    """
    reach = order * 2 ** (levels - 1)
    return min(config.derivative_eps, STENCIL_MARGIN * config.small_data_bound / reach)


# ============================================================================
# FOURIER BASIS AND BOUNDARY FUNCTIONALS
# ============================================================================

def fourier_basis(grid: Grid, modes: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Periodic Fourier basis on the base box, exp(2 pi i k.(x - lower) / L) for |k|_inf <= modes.

    Returns:
        (wave numbers k, shape (M, d); basis matrix, shape (size, M))
    """
    lower = np.asarray(grid.domain.lower, dtype=float)
    length = np.asarray(grid.domain.upper, dtype=float) - lower
    axis = np.arange(-modes, modes + 1)
    ks = np.stack(np.meshgrid(*([axis] * grid.dim), indexing="ij"), axis=-1).reshape(-1, grid.dim)
    phase = 2.0 * np.pi * ((grid.points - lower) / length) @ ks.T
    return ks, np.exp(1j * phase)


def _real_part(f: BoundaryField) -> BoundaryField:
    return BoundaryField(f.grid, np.real(f.values))


def _imag_part(f: BoundaryField) -> BoundaryField:
    return BoundaryField(f.grid, np.imag(f.values))


def complex_second_response(
    c: ConformalFactor,
    f1: BoundaryField,
    f2: BoundaryField,
    eps: float,
    cache: SolutionCache,
) -> np.ndarray:
    """
    d^2/d eps_1 d eps_2 of the DN map along complex data f1, f2, by bilinearity:

        B(a1 + i b1, a2 + i b2) = B(a1, a2) - B(b1, b2) + i (B(a1, b2) + B(b1, a2))

    Each real B is a second mixed divided difference over unit-norm directions,
    scaled back by the norms.
    """
    parts1 = [(1.0, _real_part(f1)), (1j, _imag_part(f1))]
    parts2 = [(1.0, _real_part(f2)), (1j, _imag_part(f2))]
    total = np.zeros(len(f1.grid.facets), dtype=complex)
    for w1, p in parts1:
        n1 = p.surrogate_norm()
        if n1 == 0.0:
            continue
        for w2, q in parts2:
            n2 = q.surrogate_norm()
            if n2 == 0.0:
                continue
            dd = divided_difference(c, [p * (1.0 / n1), q * (1.0 / n2)], eps, cache=cache)
            total = total + (w1 * w2 * n1 * n2) * dd.response.values
    return total


def boundary_functional(v0: ScalarField, response: np.ndarray) -> complex:
    """int_boundary v0 * response dS"""
    return complex(integrate_boundary(v0.trace() * BoundaryField(v0.grid, response)))


def constant_probe(
    c: ConformalFactor,
    grid: Grid,
    eps: float,
    cfg: Optional[NewtonConfig] = None,
    cache: Optional[SolutionCache] = None,
) -> Dict[str, float]:
    """
    Boundary functional of the second derivative along f_1 = f_2 = 1 (v_1 = v_2 = 1)
    against int t v0 dx' and the plain integral int d_n^3 c dx'.
    """
    cache = cache or SolutionCache(c, cfg)
    ones = BoundaryField(grid, np.ones(len(grid.facets)))
    v0 = adjoint_solution(c, grid)
    dd = divided_difference(c, [ones, ones], eps, cache=cache)
    measured = float(np.real(boundary_functional(v0, dd.response.values)))
    weight = top_coefficient_weight(c, grid, 2)
    expected = float(np.real(integrate_interior(ScalarField(grid, weight * v0.values))))
    plain = float(np.real(integrate_interior(ScalarField(grid, c.normal_taylor_coefficient(grid.points, 3)))))
    return {
        "boundary_functional": measured,
        "weighted_integral": expected,
        "d3c_integral": plain,
        "relative_gap": abs(measured - expected) / abs(expected) if expected else abs(measured),
        "floor": noise_floor(grid.h, eps, 2, cache.cfg.residual_tolerance),
    }


# ============================================================================
# RECOVERY OF d_n^3 c
# ============================================================================

@dataclass
class RecoveryResult:
    """
    Recovered d_n^3 c(x', 0) with the per-xi audit trail and error metrics.

    `truncated` is the Tikhonov fit, at the selected alpha, of the oracle data
    int t v0 v_1 v_2 dx' (exact interior integrals in place of DN measurements).
    metrics["field_error"] is measured against it. metrics["field_error_projection"]
    uses the L2 projection of the exact field onto the Fourier basis instead,
    and metrics["field_error_untruncated"] the exact field itself.
    """
    recovered: ScalarField
    truncated: ScalarField
    exact: ScalarField
    fourier: pd.DataFrame
    inversion: TikhonovResult
    metrics: Dict[str, float] = field(default_factory=dict)

    @property
    def excluded(self) -> pd.DataFrame:
        return self.fourier[self.fourier["excluded"]]

    def checks(
        self,
        fourier_tolerance: float = FOURIER_TOLERANCE,
        field_tolerance: float = FIELD_TOLERANCE,
    ) -> Dict[str, bool]:
        return {
            "recover.fourier_error": self.metrics["fourier_error"] <= fourier_tolerance,
            "recover.field_error": self.metrics["field_error"] <= field_tolerance,
        }


def _relative(error: float, scale: float) -> float:
    return error / scale if scale > 0 else error


def recover_d3c(config: ExperimentConfig, workers: int = 1) -> RecoveryResult:
    """
    Recover d_n^3 c(x', 0) of config.scenario from simulated DN data.

    For every xi of the half grid (the other half follows by conjugation):
    build the CGO pair, take the second mixed derivative of the DN map along
    its traces, and form the boundary functional. xi = 0 uses constant data.
    Frequencies whose CGO remainder exceeds config.max_cgo_remainder, or
    whose exponent overflows the grid, are excluded and kept in the audit table.

    Args:
        config: Experiment configuration
        workers: Thread pool size across the xi sweep

    Returns:
        RecoveryResult
    """
    c, _ = build_factors(config)
    grid = build_grid(config)
    cfg = newton_config(config)
    op = LinearizedOperator(c, grid)
    v0 = adjoint_solution(c, grid)
    n = c.dimension
    eps = stencil_eps(config, 2)

    base = op.base_value
    weight = (n - 1) / (2.0 * base)
    exact_d3c = c.normal_taylor_coefficient(grid.points, 3)
    target = weight * exact_d3c

    floor = noise_floor(grid.h, eps, 2, cfg.residual_tolerance)
    ones = BoundaryField(grid, np.ones(len(grid.facets)))
    flat = flat_reference(c, grid)
    rows, probes = [], []

    xis = xi_grid(config.xi_radius, config.xi_step, grid.dim, half=True)
    for xi in tqdm(xis, desc=f"CGO pairs ({c.name})", disable=None, leave=False):
        row = {f"xi{k + 1}": float(xi[k]) for k in range(grid.dim)}
        row.update({"h": config.cgo_h, "excluded": False, "reason": ""})
        rows.append(row)
        try:
            if not np.any(xi):
                f1 = f2 = ones
                v_product = np.ones(grid.size)
                remainder = 0.0
            else:
                pair = make_zeta_pair(xi, config.cgo_h)
                first, second = build_cgo_pair(c, grid, pair, path="operator", op=op, reference=flat)
                f1, f2 = first.trace, second.trace
                v_product = first.interior.values * second.interior.values
                remainder = max(first.relative_remainder, second.relative_remainder)
        except CGOError as e:
            row.update({"remainder": np.nan, "excluded": True, "reason": str(e)})
            logger.warning("⚠ xi=%s excluded: %s", xi, e)
            continue

        row["remainder"] = remainder
        if remainder > config.max_cgo_remainder:
            row.update({"excluded": True, "reason": f"CGO remainder {remainder:.3e} > {config.max_cgo_remainder:.3e}"})
            logger.warning("⚠ xi=%s excluded: %s", xi, row["reason"])
            continue
        probes.append((row, xi, f1, f2, v0.values * v_product))

    def measure(probe) -> Tuple[complex, complex]:
        row, xi, f1, f2, product = probe
        cache = SolutionCache(c, cfg)
        measured = boundary_functional(v0, complex_second_response(c, f1, f2, eps, cache))
        oracle = complex(integrate_interior(ScalarField(grid, target * product)))
        exact = complex(integrate_interior(ScalarField(grid, target * np.exp(1j * grid.points @ xi))))
        row.update({
            "recovered_re": measured.real, "recovered_im": measured.imag,
            "oracle_re": oracle.real, "oracle_im": oracle.imag,
            "exact_re": exact.real, "exact_im": exact.imag,
            "identity_gap": _relative(abs(measured - oracle), abs(oracle)),
            "solves": len(cache),
        })
        return measured, oracle

    desc = f"recover xi sweep ({c.name})"
    if workers > 1 and len(probes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(measure, probe) for probe in probes]
            responses = [future.result() for future in tqdm(futures, desc=desc, disable=None, leave=False)]
    else:
        responses = [measure(probe) for probe in tqdm(probes, desc=desc, disable=None, leave=False)]

    products, data, noise = [], [], []
    for (row, xi, _, _, product), (measured, oracle) in zip(probes, responses):
        level = (row["remainder"] + floor) * abs(measured)
        products.append(product)
        data.append((measured, oracle))
        noise.append(level)
        if np.any(xi):
            products.append(np.conj(product))
            data.append((np.conj(measured), np.conj(oracle)))
            noise.append(level)

    fourier = pd.DataFrame(rows)
    if not products:
        raise CGOError("every xi was excluded; lower h or raise max_cgo_remainder")

    ks, basis = fourier_basis(grid, config.fourier_modes)
    weights = grid.quadrature_weights
    A = (np.asarray(products) * weights) @ basis
    y = np.array([measured for measured, _ in data])
    y_oracle = np.array([oracle for _, oracle in data])
    noise_level = float(np.linalg.norm(noise))

    inversion = regularized_inverse(
        A, y, alpha=config.tikhonov_alpha, noise_level=noise_level, tau=config.discrepancy_tau,
    )
    if inversion.condition > ILL_CONDITIONED:
        logger.warning("⚠ recovery system is ill-conditioned: cond(A) = %.3e", inversion.condition)
    reference = tikhonov_solve(A, y_oracle, inversion.alpha)

    t_recovered = np.real(basis @ inversion.x)
    sqrt_w = np.sqrt(weights)
    projection, *_ = np.linalg.lstsq(basis * sqrt_w[:, None], target * sqrt_w, rcond=None)
    t_truncated = np.real(basis @ reference)
    recovered = ScalarField(grid, t_recovered / weight)
    truncated = ScalarField(grid, t_truncated / weight)
    exact_field = ScalarField(grid, exact_d3c)
    projected = ScalarField(grid, np.real(basis @ projection) / weight)

    kept = fourier[~fourier["excluded"]]
    measured_coef = kept["recovered_re"].to_numpy() + 1j * kept["recovered_im"].to_numpy()
    exact_coef = kept["exact_re"].to_numpy() + 1j * kept["exact_im"].to_numpy()
    fourier_error = _relative(float(np.max(np.abs(measured_coef - exact_coef))), float(np.max(np.abs(exact_coef))))
    field_error = _relative((recovered - truncated).l2_norm(), truncated.l2_norm())
    untruncated = _relative((recovered - exact_field).l2_norm(), exact_field.l2_norm())
    projection_error = _relative((recovered - projected).l2_norm(), projected.l2_norm())

    metrics = {
        "fourier_error": fourier_error,
        "field_error": field_error,
        "field_error_projection": projection_error,
        "field_error_untruncated": untruncated,
        "identity_gap_max": float(kept["identity_gap"].max()),
        "alpha": inversion.alpha,
        "condition": inversion.condition,
        "residual": inversion.residual,
        "noise_level": noise_level,
        "floor": floor,
        "eps": eps,
        "n_xi": int(len(fourier)),
        "n_excluded": int(fourier["excluded"].sum()),
        "n_modes": int(len(ks)),
        "solves": int(sum(row.get("solves", 0) for row in rows)),
    }
    logger.info(
        "✓ recovered d3c on %s: Fourier error %.3e, field error %.3e (%d/%d xi kept)",
        c.name, fourier_error, field_error, len(kept), len(fourier),
    )
    return RecoveryResult(
        recovered=recovered,
        truncated=truncated,
        exact=exact_field,
        fourier=fourier,
        inversion=inversion,
        metrics=metrics,
    )


def amplitude_scaling(
    config: ExperimentConfig,
    factor: float = 2.0,
    workers: int = 1,
    baseline: Optional[RecoveryResult] = None,
) -> Dict[str, float]:
    """
    Recover again with the scenario's d_n^3 c amplitude scaled and measure how
    far the recovered field is from the baseline scaled by the same factor.

    Args:
        config: Experiment configuration of the baseline
        factor: Amplitude multiplier
        workers: Thread pool size
        baseline: Recovery for config (computed when None)

    Returns:
        Dict with factor, parameter_value, scaling_deviation and passed
    """
    parameter = AMPLITUDE_PARAMETER.get(config.scenario)
    if parameter is None:
        raise ConfigurationError(f"scenario '{config.scenario}' has no amplitude parameter to scale")
    c, _ = build_factors(config)
    scaled_params = dict(config.scenario_params)
    scaled_params[parameter] = factor * float(c.params[parameter])
    scaled_config = config.model_copy(update={"scenario_params": scaled_params})

    first = baseline if baseline is not None else recover_d3c(config, workers)
    second = recover_d3c(scaled_config, workers)
    expected = first.recovered * factor
    deviation = _relative((second.recovered - expected).l2_norm(), expected.l2_norm())
    logger.info("✓ amplitude scaling x%.3g on %s: deviation %.3e", factor, config.scenario, deviation)
    return {
        "factor": factor,
        "parameter_value": float(c.params[parameter]),
        "scaling_deviation": deviation,
        "passed": deviation <= SCALING_TOLERANCE,
    }


# ============================================================================
# HIGHER-ORDER IDENTITY
# ============================================================================

def higher_order_check(config: ExperimentConfig, workers: int = 1) -> Tuple[HigherOrderReport, bool]:
    """
    Order-m identity (m = config.order >= 3) for config.scenario with unit test directions.

    Returns:
        (report, passed) where passed compares the top-coefficient error with
        safety_factor times the predicted floor, scaled by the exact value
    """
    if config.order < 3:
        raise ConfigurationError(f"the higher-order identity needs order >= 3, got {config.order}")
    c, _ = build_factors(config)
    grid = build_grid(config)
    directions = probe_directions(config, grid)
    eps = stencil_eps(config, config.order)
    report = verify_higher_order(c, config.order, directions, eps, newton_config(config), workers)
    budget = config.safety_factor * report.floor * max(1.0, abs(report.exact_top))
    return report, report.abs_error <= budget


# ============================================================================
# THEOREM CONSISTENCY
# ============================================================================

@dataclass
class TheoremReport:
    """DN discrepancies of two factors next to their Taylor-coefficient discrepancies."""
    taylor: pd.DataFrame
    dn: pd.DataFrame
    first_differing_order: Optional[int]
    matched_dn_discrepancy: float
    consistent: bool

    def to_dict(self) -> Dict[str, float]:
        return {
            "first_differing_order": -1 if self.first_differing_order is None else self.first_differing_order,
            "matched_dn_discrepancy": self.matched_dn_discrepancy,
            "max_taylor_discrepancy": float(self.taylor["discrepancy"].max()),
            "max_dn_discrepancy": float(self.dn["discrepancy"].max()) if len(self.dn) else 0.0,
            "consistent": self.consistent,
        }


def taylor_discrepancy(c1: ConformalFactor, c2: ConformalFactor, grid: Grid, max_order: int = TAYLOR_ORDERS) -> pd.DataFrame:
    """max over grid nodes of |d_n^k c1(x', 0) - d_n^k c2(x', 0)| for k = 0..max_order."""
    rows = []
    for k in range(max_order + 1):
        gap = c1.normal_taylor_coefficient(grid.points, k) - c2.normal_taylor_coefficient(grid.points, k)
        rows.append({"order": k, "discrepancy": float(np.max(np.abs(gap)))})
    return pd.DataFrame(rows)


def _sup(values: np.ndarray) -> float:
    return float(np.max(np.abs(values)))


def verify_theorem_consistency(config: ExperimentConfig, workers: int = 1) -> TheoremReport:
    """
    Contrapositive check of the uniqueness theorem.

    Factors that first differ at normal order k must show DN divided-difference
    discrepancies above the floor from linearization order k - 1 on, and below
    it before. The floor is safety_factor x (Richardson bias of the eps and
    2 eps levels + solver tolerance / eps^m), per grid spacing for the normal
    derivative. Without a comparison scenario the factor is compared with itself.

    Args:
        config: Experiment configuration (comparison_scenario selects c2)
        workers: Thread pool size for the forward solves

    Returns:
        TheoremReport
    """
    c1, c2 = build_factors(config)
    if c2 is None:
        logger.info("no comparison scenario, comparing %s with itself", c1.name)
        c2 = c1
    grid = build_grid(config)
    cfg = newton_config(config)

    taylor = taylor_discrepancy(c1, c2, grid)
    differing = taylor[taylor["discrepancy"] > TAYLOR_MATCH_TOLERANCE]["order"]
    first = int(differing.iloc[0]) if len(differing) else None
    top = max(config.order, first - 1 if first else 1)
    orders = range(1, min(top, TAYLOR_ORDERS) + 1)

    probes = probe_directions(config, grid)
    matched = 0.0
    for f in probes:
        f_matched = f * config.amplitude
        r1, r2 = dn_map(c1, f_matched, cfg), dn_map(c2, f_matched, cfg)
        matched = max(matched, _sup(r1.response.values - r2.response.values))

    caches = (SolutionCache(c1, cfg, workers), SolutionCache(c2, cfg, workers))
    rows = []
    for index, f in enumerate(probes):
        for m in orders:
            eps = stencil_eps(config, m, levels=2)
            fine, coarse = [], []
            for factor, cache in zip((c1, c2), caches):
                fine.append(divided_difference(factor, [f] * m, eps, cache=cache).response.values)
                coarse.append(divided_difference(factor, [f] * m, 2.0 * eps, cache=cache).response.values)
            bias = (_sup(coarse[0] - fine[0]) + _sup(coarse[1] - fine[1])) / 3.0
            roundoff = noise_floor(0.0, eps, m, cfg.residual_tolerance, c_grid=0.0, c_eps=0.0) / grid.h
            floor = config.safety_factor * (bias + roundoff)
            discrepancy = _sup(fine[0] - fine[1])
            scale = _sup(fine[0])
            rows.append({
                "probe": index,
                "order": m,
                "eps": eps,
                "discrepancy": discrepancy,
                "floor": floor,
                "above_floor": discrepancy > floor,
                "expected_above": first is not None and m >= first - 1,
                "ratio": _sup(fine[1]) / scale if scale > 0 else np.nan,
            })
    dn = pd.DataFrame(rows)
    consistent = bool((dn["above_floor"] == dn["expected_above"]).all()) if len(dn) else True
    report = TheoremReport(
        taylor=taylor,
        dn=dn,
        first_differing_order=first,
        matched_dn_discrepancy=matched,
        consistent=consistent,
    )
    marker = "✓" if consistent else "✗"
    logger.info(
        "%s theorem consistency %s vs %s: first differing order %s, matched DN discrepancy %.3e",
        marker, c1.name, c2.name, first, matched,
    )
    return report
